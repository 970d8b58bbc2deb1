"""Acceptance gate: one test per criterion, each timed against its budget."""
import json
import time

import numpy as np
import pytest

from ccotdr.analysis import (extract_phase_series, fit_line, mean_spectrum, tone_peak_to_peak,
                             unwrap_time, window_slope)
from ccotdr.channel import FULL, NoiseSpec, build_impulse_response, residual_phase_std, simulate_run, simulate_shot
from ccotdr.cli import cmd_reproduce
from ccotdr.config import RunConfig, preset
from ccotdr.correlator import correlate_shot
from ccotdr.fibermodel import (Acoustic, Airflow, FiberEvent, FiberLayout, GroundTruth, RayleighCells,
                               ScenarioProfile, Stage, derived_dn_dt, true_phase_difference)
from ccotdr.waveform import PRIMITIVE_POLYNOMIALS, build_probe_frame, gen_prbs
from scipy import stats

K = 1.661e4
FS = 4000.0


def quiet_profile(duration, tone=False, fan=False):
    return ScenarioProfile(stages=(Stage(duration, 30.0, fan),), acoustic=Acoustic(enabled=tone),
                           airflow=Airflow())


def ramp_truth(profile, rate=0.05, seed=0, fs=FS):
    """Ground truth with the core temperature ramping at ``rate`` K/s."""
    t = np.arange(int(round(profile.duration * fs))) / fs
    core = 30.0 + rate * t
    dphi = true_phase_difference(profile, core, t, np.random.SeedSequence([seed, 2]))
    return GroundTruth(t, core.copy(), core, dphi)


def matched_series(profile, truth, seed=0):
    cfg = RunConfig(scenario=profile, seed=seed)
    return extract_phase_series(simulate_run(cfg, truth=truth))


def test_criterion_1_phase_noise_budget(measured):
    start = time.perf_counter()
    cfg = RunConfig(scenario=quiet_profile(5.0))
    run = simulate_run(cfg)
    series = extract_phase_series(run)
    resid = np.angle(np.exp(1j * (series.dphi_wrapped - run.truth.phase_diff_true)))
    layout = cfg.layout
    delay = layout.two_way_delay(234.0) - layout.two_way_delay(39.0)
    expected = residual_phase_std(100.0, delay)
    elapsed = time.perf_counter() - start
    measured("shots", len(run))
    measured("std_rad", float(resid.std()))
    measured("expected_rad", expected)
    assert len(run) >= 10_000
    assert delay == pytest.approx(1.95e-6, rel=2e-3)
    assert resid.std() <= 0.05
    assert resid.std() == pytest.approx(expected, rel=0.10)
    assert elapsed < 10


def test_criterion_2_tone_recovery(measured):
    start = time.perf_counter()
    cfg = preset("tone-only")
    series = extract_phase_series(simulate_run(cfg))
    pp = tone_peak_to_peak(series.t, series.dphi_unwrapped, 400.0)
    sp = mean_spectrum(series, 0.1)
    k = 1 + int(np.argmax(sp.magnitude[1:]))
    margin = 20 * np.log10(sp.magnitude[k] / np.median(sp.magnitude[1:]))
    elapsed = time.perf_counter() - start
    measured("pp_rad", pp)
    measured("peak_hz", float(sp.freq[k]))
    measured("margin_db", float(margin))
    assert pp == pytest.approx(0.25, abs=0.01)
    assert sp.freq[k] == pytest.approx(400.0)
    assert margin >= 20
    assert elapsed < 30


def test_criterion_3_slope_to_rate(measured):
    start = time.perf_counter()
    prof = quiet_profile(10.0)
    series = matched_series(prof, ramp_truth(prof))
    reps = window_slope(series, 0.1)
    slopes = np.array([r.slope for r in reps])
    rates = slopes / K
    elapsed = time.perf_counter() - start
    measured("windows", len(reps))
    measured("slope_min", float(slopes.min()))
    measured("slope_max", float(slopes.max()))
    measured("rate_max_err", float(np.abs(rates - 0.05).max()))
    assert np.all(np.abs(slopes - 830.5) <= 8)
    assert np.all(np.abs(rates - 0.05) <= 0.0005)
    assert elapsed < 30


def test_criterion_4_dn_dt(measured):
    val = derived_dn_dt(1.661e4, 1.55e-6, 195)
    measured("dn_dT", val)
    assert 1.0e-5 <= val <= 1.1e-5


def test_criterion_5_thermal_lag_fit(tmp_path, measured):
    start = time.perf_counter()
    summary, ok = cmd_reproduce("paper-default", tmp_path / "default", threads=1)
    elapsed = time.perf_counter() - start
    checks = summary["checks"]
    tau = checks["tau_s"]["value"]
    peak = checks["peak_temp_C"]["value"]
    truth = np.loadtxt(tmp_path / "default" / "simulate" / "ground_truth.csv", delimiter=",", skiprows=1)
    measured("tau_s", tau)
    measured("peak_C", peak)
    measured("truth_peak_C", float(truth[:, 2].max()))
    measured("all_checks", ok)
    assert tau == pytest.approx(73.0, abs=3.0)
    assert peak == pytest.approx(37.5, abs=0.5)
    assert abs(peak - truth[:, 2].max()) <= 0.5
    assert json.loads((tmp_path / "default" / "summary.json").read_text())["pass"] is ok
    assert elapsed < 300


def test_criterion_6_separation(measured):
    ramp = quiet_profile(10.0)
    toned = quiet_profile(10.0, tone=True)
    seed = 3
    s_ramp = matched_series(ramp, ramp_truth(ramp, seed=seed), seed)
    s_both = matched_series(toned, ramp_truth(toned, seed=seed), seed)
    r_ramp = window_slope(s_ramp, 0.1)
    r_both = window_slope(s_both, 0.1)
    shift = np.array([abs(a.slope - b.slope) for a, b in zip(r_ramp, r_both)])
    err = np.array([b.slope_stderr for b in r_both])
    measured("max_shift_over_stderr", float(np.max(shift / err)))
    assert np.all(shift < err)

    flat = ramp_truth(toned, rate=0.0, seed=seed)
    s_tone = matched_series(toned, flat, seed)
    a = mean_spectrum(s_tone, 0.1).magnitude[40]
    b = mean_spectrum(s_both, 0.1).magnitude[40]
    measured("tone_bin_change", float(abs(b / a - 1)))
    assert abs(b / a - 1) < 0.01


def test_criterion_7_fast_full_equivalence(measured):
    cfg = preset("paper-default").replace(noise=NoiseSpec(0.0, np.inf))
    fast = simulate_run(cfg)
    tr = fast.truth
    sub = GroundTruth(tr.t[:64], tr.chamber_temp[:64], tr.core_temp[:64], tr.phase_diff_true[:64])
    full = simulate_run(cfg.replace(mode=FULL), truth=sub)
    frame = build_probe_frame(cfg.probe)
    dz = cfg.layout.distance_step(cfg.probe.sample_rate)
    s_full = extract_phase_series(full, *full.event_taps, frame=frame, distance_step=dz)
    s_fast = extract_phase_series(fast)
    d = np.angle(np.exp(1j * (s_full.dphi_wrapped - s_fast.dphi_wrapped[:64])))
    rms = float(np.sqrt(np.mean(d ** 2)))
    measured("rms_rad", rms)
    assert len(full) == 64
    assert rms <= 0.02


def _lfsr_states(order, poly):
    mask = poly & ((1 << order) - 1)
    state, seen = 1, set()
    while state not in seen:
        seen.add(state)
        fb = bin(state & mask).count("1") & 1
        state = (state >> 1) | (fb << (order - 1))
    return seen


def test_criterion_8_property_suites(measured):
    # LFSR: every table polynomial walks all 2^n - 1 nonzero states.
    for order, polys in PRIMITIVE_POLYNOMIALS.items():
        for poly in polys:
            assert _lfsr_states(order, poly) == set(range(1, 1 << order))
            assert gen_prbs(order, poly).size == (1 << order) - 1

    # Matched-filter gain against the code energy.
    frame = build_probe_frame()
    layout = FiberLayout(events=(FiberEvent(39.0, return_loss=0.0),), rayleigh=RayleighCells(enabled=False))
    ir = build_impulse_response(layout)
    clean = correlate_shot(simulate_shot(frame, ir, 0.0, NoiseSpec(0.0, np.inf)).rx_samples[0],
                           frame.reference, distance_step=ir.distance_step).bins
    rng = np.random.default_rng(11)
    noise = [np.mean(np.abs(correlate_shot(simulate_shot(frame, ir, 0.0, NoiseSpec(0.0, 0.0), rng=rng)
                                           .rx_samples[0], frame.reference,
                                           distance_step=ir.distance_step).bins - clean) ** 2)
             for _ in range(100)]
    gain = 10 * np.log10(abs(clean[195]) ** 2 / np.mean(noise))
    measured("mf_gain_db", float(gain))
    assert gain == pytest.approx(34.0, abs=1.0)

    # Unwrap then wrap returns the wrapped input.
    steps = rng.uniform(-3.0, 3.0, 10_000)
    wrapped = np.angle(np.exp(1j * np.cumsum(steps)))
    un = unwrap_time(wrapped)
    np.testing.assert_allclose(np.angle(np.exp(1j * un)), wrapped, atol=1e-9)

    # Least squares against the normal equations.
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(3, 500))
        t = np.sort(rng.uniform(0, 1, n)) + np.arange(n) * 1e-3
        y = rng.normal() + rng.normal() * t + rng.normal(0, 0.1, n)
        X = np.column_stack([np.ones(n), t])
        coef = np.linalg.solve(X.T @ X, X.T @ y)
        worst = max(worst, abs(fit_line(t, y)[0] / coef[1] - 1))
    measured("ls_rel_err", worst)
    assert worst <= 1e-9

    # Rayleigh speckle magnitudes.
    speckle = build_impulse_response(FiberLayout(events=(FiberEvent(39.0), FiberEvent(234.0))), seed=8)
    mags = np.abs(np.delete(speckle.taps[0], [0, 195, 1170]))
    mags = mags[mags > 0]
    p = stats.kstest(mags, stats.rayleigh(scale=np.sqrt(1e-8 / 2)).cdf).pvalue
    measured("rayleigh_ks_p", float(p))
    assert p > 0.01

    # Bit-exact output across thread counts.
    cfg = RunConfig(scenario=quiet_profile(40.0, tone=True, fan=True))
    assert simulate_run(cfg, threads=1).data.tobytes() == simulate_run(cfg, threads=4).data.tobytes()
    full = cfg.replace(mode=FULL, shot_rate=8000, scenario=quiet_profile(2e-3, tone=True))
    assert simulate_run(full, threads=1).data.tobytes() == simulate_run(full, threads=3).data.tobytes()


def test_criterion_9_fan_signature(measured):
    seed = 5
    spectra = {}
    for fan in (False, True):
        prof = quiet_profile(20.0, tone=True, fan=fan)
        series = matched_series(prof, ramp_truth(prof, rate=0.0, seed=seed), seed)
        spectra[fan] = mean_spectrum(series, 0.1)
    f = spectra[True].freq
    low = (f > 0) & (f < 400)
    on = float(spectra[True].magnitude[low].sum())
    off = float(spectra[False].magnitude[low].sum())
    tone_change = float(abs(spectra[True].magnitude[40] / spectra[False].magnitude[40] - 1))
    measured("below_400_on", on)
    measured("below_400_off", off)
    measured("tone_bin_change", tone_change)
    assert on > off
    assert tone_change < 0.05
