"""Acoustic tone recovery and the effect of the fan on the detrended spectrum."""
# %%
import numpy as np

from ccotdr import preset, simulate_run
from ccotdr.analysis import extract_phase_series, mean_spectrum, tone_peak_to_peak, window_slope

cfg = preset("tone-only")
series = extract_phase_series(simulate_run(cfg))
pp = tone_peak_to_peak(series.t, series.dphi_unwrapped, 400.0)
print(f"{series.t.size} shots at {series.sample_rate:.0f} Hz, tone pp {pp:.4f} rad")

# %% Window slopes carry almost nothing of the tone.
reps = window_slope(series, 0.1)
slopes = np.array([r.slope for r in reps])
errs = np.array([r.slope_stderr for r in reps])
print(f"window slopes: mean {slopes.mean():+.3f} rad/s, typical stderr {np.median(errs):.3f} rad/s")

# %% Fan on adds broadband phase noise below 400 Hz.
default = preset("paper-default")
run = simulate_run(default)
s = extract_phase_series(run)
off = mean_spectrum(s, 0.1, 0.0, 27.0)
on = mean_spectrum(s, 0.1, 27.0, 54.0)
low = (off.freq > 0) & (off.freq < 400)
print(f"integrated magnitude below 400 Hz: fan off {off.magnitude[low].sum():.3f}, "
      f"fan on {on.magnitude[low].sum():.3f} rad")
print(f"400 Hz bin: fan off {off.magnitude[40]:.4f}, fan on {on.magnitude[40]:.4f} rad")

# %%
from _plot import plt, save  # noqa: E402

if plt is not None:
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.semilogy(off.freq, off.magnitude, label="fan off")
    ax.semilogy(on.freq, on.magnitude, label="fan on", alpha=0.8)
    ax.set_xlabel("frequency (Hz)")
    ax.set_ylabel("magnitude (rad)")
    ax.legend()
    save(fig, "spectrum.png")
