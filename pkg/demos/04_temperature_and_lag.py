"""Calibrate on a heating run, then track the default profile and fit the lag."""
# %%
import numpy as np

from ccotdr import preset, simulate_run
from ccotdr.analysis import (calibrate, decimate_mean, extract_phase_series, fit_time_constant,
                             phase_to_temperature, window_slope)

cal_cfg = preset("calibration")
cal_run = simulate_run(cal_cfg)
cal_series = extract_phase_series(cal_run)
tb, ph = decimate_mean(cal_series.t, cal_series.dphi_unwrapped, 1.0)
_, ref = decimate_mean(cal_run.truth.t, cal_run.truth.chamber_temp, 1.0)
cal = calibrate(ph, ref, 1.0)
print(f"calibration: {cal.coefficient:.1f} rad/K (configured {cal_cfg.scenario.phase_temp_coeff:.1f}), "
      f"tau {cal.tau:.2f} s")

# %% Track the default profile with that coefficient.
cfg = preset("paper-default")
run = simulate_run(cfg)
series = extract_phase_series(run)
est = phase_to_temperature(series, cal.coefficient, 30.0, 1.0)
_, chamber = decimate_mean(run.truth.t, run.truth.chamber_temp, 1.0)
_, core = decimate_mean(run.truth.t, run.truth.core_temp, 1.0)
print(f"peak: reconstructed {est.temp.max():.3f} C, true core {core.max():.3f} C, "
      f"chamber {chamber.max():.3f} C")
print(f"max |reconstructed - true core| = {np.abs(est.temp - core).max():.3f} K")

# %% The lag between chamber and fiber core.
fit = fit_time_constant(chamber, est.temp, 1.0, (10, 300), initial=chamber[0])
print(f"fitted thermal time constant: {fit.tau:.2f} s")

# %% A 100 ms window slope during the ramp reads as a heating rate.
reps = window_slope(series, 0.1)
k = int(np.argmax([r.slope for r in reps]))
print(f"steepest window at {reps[k].window_start:.1f} s: {reps[k].slope:.1f} rad/s "
      f"= {reps[k].slope / cal.coefficient:.4f} K/s")

# %%
from _plot import plt, save  # noqa: E402

if plt is not None:
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(est.t, chamber[:est.t.size], label="chamber")
    ax.plot(est.t, est.temp, label="fiber (reconstructed)")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("temperature (C)")
    ax.legend()
    save(fig, "temperature.png")
