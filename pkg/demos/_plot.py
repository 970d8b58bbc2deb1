"""Optional figure output; the demos print their numbers either way."""
from pathlib import Path

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:  # plotting is not a package dependency
    plt = None

OUT = Path(__file__).with_name("figures")


def save(fig, name):
    OUT.mkdir(exist_ok=True)
    fig.savefig(OUT / name, dpi=120, bbox_inches="tight")
    plt.close(fig)
    print(f"  wrote {OUT / name}")
