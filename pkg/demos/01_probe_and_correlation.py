"""Probe code, its autocorrelation, and what the matched filter buys.

Run with ``python demos/01_probe_and_correlation.py``.
"""
# %%
import numpy as np

from ccotdr import build_probe_frame
from ccotdr.waveform import autocorrelate, max_sidelobe

frame = build_probe_frame()
print(f"symbols: {frame.symbols.size}, samples: {frame.samples.size} "
      f"({frame.n_signal} code + {frame.samples.size - frame.n_signal} zero pad)")
print(f"frame period: {frame.frame_period * 1e6:.3f} us, max shot rate {1 / frame.frame_period / 1e3:.1f} kHz")

# %% Aperiodic autocorrelation: peak 512, worst sidelobe 24.
acf = autocorrelate(frame.symbols)
lags = np.arange(acf.size) - (frame.symbols.size - 1)
print(f"peak {acf[lags == 0][0]}, max sidelobe {max_sidelobe(frame.symbols)} "
      f"({20 * np.log10(24 / 512):.1f} dB)")
print(f"sidelobe at 195 chips, the connector spacing: {acf[lags == 195][0]}")

# %% Processing gain is the code energy in samples.
print(f"matched-filter gain: {10 * np.log10(frame.energy):.2f} dB")

# %%
from _plot import plt, save  # noqa: E402

if plt is not None:
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(lags, acf, lw=0.7)
    ax.set_xlabel("lag (chips)")
    ax.set_ylabel("R(k)")
    save(fig, "probe_acf.png")
