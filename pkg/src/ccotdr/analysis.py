"""Interrogator back half: differential phase to acoustics and temperature.

The differential phase between two reflectors is unwrapped in time, split
into fixed windows whose least-squares slope tracks the slow temperature
drift, and whose detrended spectrum carries the fast acoustic and airflow
components. Temperatures follow from a lumped phase coefficient; a
first-order lag relates them to the chamber reference.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.signal import get_window

from .channel import FAST, ShotRun
from .correlator import Reflectogram, correlate_shot
from .errors import CalibrationUnavailable, DataGapError, MultimodalityWarning
from .fibermodel import core_temperature
from .waveform import ProbeFrame

log = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5) - 1) / 2


@dataclass
class PhaseSeries:
    t: np.ndarray
    dphi_wrapped: np.ndarray
    dphi_unwrapped: np.ndarray
    source: tuple[int, int]

    @property
    def sample_rate(self) -> float:
        return 1.0 / float(np.mean(np.diff(self.t))) if self.t.size > 1 else float("nan")


@dataclass
class Spectrum:
    freq: np.ndarray
    magnitude: np.ndarray


@dataclass
class WindowReport:
    window_start: float
    window_len: float
    slope: float
    slope_stderr: float
    n_samples: int
    detrended_spectrum: Spectrum | None = field(default=None, repr=False)


@dataclass
class TemperatureEstimate:
    t: np.ndarray
    temp: np.ndarray
    coeff_used: float
    offset_calibration: float


@dataclass(frozen=True)
class TauFit:
    tau: float
    sse: float
    multimodal: bool = False


def unwrap_time(series) -> np.ndarray:
    """Nearest-multiple-of-2*pi unwrapping along time; first sample kept.

    Only valid while the true phase moves by less than pi between shots.
    """
    return np.unwrap(np.asarray(series, dtype=float))


def _bin_stack(source, event_a: int, event_b: int, frame: ProbeFrame | None,
               distance_step: float | None):
    """Complex values of the two events per shot, as an (n, 2) array, plus times."""
    if isinstance(source, ShotRun):
        if source.mode == FAST:
            slots = {0: 0, 1: 1, source.event_taps[0]: 0, source.event_taps[1]: 1}
            if event_a not in slots or event_b not in slots:
                raise ValueError("fast-mode runs only carry the two monitored reflectors")
            cols = [slots[event_a], slots[event_b]]
            return source.t, source.phasors[:, cols]
        if frame is None or distance_step is None:
            raise ValueError("full-mode runs need the probe frame and distance_step")
        refl = [correlate_shot(rec.rx_samples, frame.reference, distance_step=distance_step,
                               t_shot=rec.t_shot) for rec in source]
        return _bin_stack(refl, event_a, event_b, None, None)
    if len(source) and isinstance(source[0], Reflectogram):
        t = np.array([r.t_shot for r in source])
        rows = []
        for k, r in enumerate(source):
            if max(event_a, event_b) >= r.bins.shape[-1]:
                raise DataGapError(k)
            rows.append(r.bins[..., [event_a, event_b]])
        bins = np.stack(rows)  # (n, 2) or (n, n_pol, 2)
        if bins.ndim == 3:
            strongest = np.argmax(np.mean(np.abs(bins), axis=0), axis=0)
            bins = np.stack([bins[:, strongest[0], 0], bins[:, strongest[1], 1]], axis=1)
        return t, bins
    raise TypeError("source must be a ShotRun or a sequence of Reflectogram")


def extract_phase_series(source, event_a: int = 0, event_b: int = 1, *,
                         frame: ProbeFrame | None = None,
                         distance_step: float | None = None) -> PhaseSeries:
    """Differential phase ``arg(b * conj(a))`` of two events across shots.

    ``source`` is a fast-mode :class:`ShotRun` (events 0 and 1 are its two
    phasors), a full-mode run (with ``frame`` and ``distance_step``), or a
    sequence of reflectograms (events are bin indices). Laser phase common to
    both returns cancels in the product.
    """
    t, bins = _bin_stack(source, event_a, event_b, frame, distance_step)
    bins = np.asarray(bins)
    bad = ~np.isfinite(bins).all(axis=1) | (bins == 0).any(axis=1)
    if bad.any():
        raise DataGapError(int(np.argmax(bad)))
    # Same as arg(b * conj(a)), but exactly zero when the two bins coincide.
    wrapped = np.remainder(np.angle(bins[:, 1]) - np.angle(bins[:, 0]) + np.pi, 2 * np.pi) - np.pi
    return PhaseSeries(np.asarray(t, dtype=float), wrapped, unwrap_time(wrapped), (event_a, event_b))


def phase_series_from_arrays(t, dphi) -> PhaseSeries:
    t = np.asarray(t, dtype=float)
    dphi = np.asarray(dphi, dtype=float)
    wrapped = np.angle(np.exp(1j * dphi))
    return PhaseSeries(t, wrapped, unwrap_time(wrapped), (0, 1))


def fit_line(t, y) -> tuple[float, float, float]:
    """Ordinary least squares ``y = a + b t``; returns ``(slope, stderr, intercept)``."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    n = t.size
    if n < 3:
        raise ValueError("need at least 3 samples for a line fit with stderr")
    tm = t.mean()
    ym = y.mean()
    dt = t - tm
    sxx = float(dt @ dt)
    slope = float(dt @ (y - ym)) / sxx
    intercept = ym - slope * tm
    resid = y - (intercept + slope * t)
    s2 = float(resid @ resid) / (n - 2)
    return slope, math.sqrt(s2 / sxx), intercept


def detrended_spectrum(y, t, window: str = "hann", correct_gain: bool = True) -> Spectrum:
    """Single-sided magnitude spectrum after removing the least-squares line.

    With ``correct_gain`` the window's coherent gain is divided out so a
    bin-centred tone of amplitude ``A`` reads ``A``; without it the bin reads
    ``A`` times the coherent gain (0.5 for Hann).
    """
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    n = y.size
    slope, _, intercept = fit_line(t - t[0], y)
    resid = y - (intercept + slope * (t - t[0]))
    w = get_window(window if window != "rect" else "boxcar", n)
    spec = np.abs(np.fft.rfft(resid * w))
    norm = w.sum() if correct_gain else n
    mag = spec / norm
    mag[1:] *= 2
    if n % 2 == 0:
        mag[-1] /= 2
    fs = (n - 1) / (t[-1] - t[0])
    return Spectrum(np.fft.rfftfreq(n, 1 / fs), mag)


def _window_bounds(n: int, fs: float, window_len: float, overlap: float):
    size = int(round(window_len * fs))
    if size < 16:
        raise ValueError(f"window of {window_len} s holds {size} samples; need at least 16")
    hop = max(1, int(round(size * (1 - overlap))))
    bounds = []
    start = 0
    while start < n:
        stop = min(start + size, n)
        if stop - start < size / 2:
            log.info("dropping short final window of %d samples at index %d", stop - start, start)
            break
        bounds.append((start, stop))
        if stop == n:
            break
        start += hop
    return bounds, size


def window_slope(series: PhaseSeries, window_len: float = 0.1, overlap: float = 0.0,
                 spectrum: bool = False, window: str = "hann") -> list[WindowReport]:
    """Least-squares slope of the unwrapped phase in consecutive windows."""
    t = series.t
    y = series.dphi_unwrapped
    bounds, _ = _window_bounds(t.size, series.sample_rate, window_len, overlap)
    reports = []
    for a, b in bounds:
        tw = t[a:b] - t[a]
        slope, err, _ = fit_line(tw, y[a:b])
        spec = detrended_spectrum(y[a:b], t[a:b], window) if spectrum else None
        reports.append(WindowReport(float(t[a]), window_len, slope, err, b - a, spec))
    return reports


def mean_spectrum(series: PhaseSeries, window_len: float = 0.1, t_start: float | None = None,
                  t_stop: float | None = None, window: str = "hann") -> Spectrum:
    """Detrended magnitude spectra averaged over full windows in a time span."""
    t = series.t
    sel = np.ones(t.size, dtype=bool)
    if t_start is not None:
        sel &= t >= t_start
    if t_stop is not None:
        sel &= t < t_stop
    idx = np.flatnonzero(sel)
    if idx.size == 0:
        raise ValueError("no samples in the requested span")
    sub = PhaseSeries(t[idx], series.dphi_wrapped[idx], series.dphi_unwrapped[idx], series.source)
    reps = [r for r in window_slope(sub, window_len, spectrum=True, window=window)
            if r.n_samples == int(round(window_len * sub.sample_rate))]
    if not reps:
        raise ValueError("span shorter than one window")
    return Spectrum(reps[0].detrended_spectrum.freq,
                    np.mean([r.detrended_spectrum.magnitude for r in reps], axis=0))


def tone_peak_to_peak(t, y, frequency: float) -> float:
    """Peak-to-peak amplitude of a sinusoid at ``frequency`` by least squares.

    The fit includes an offset and a linear trend, so drift and broadband
    shot noise do not inflate the estimate the way ``max - min`` would.
    """
    t = np.asarray(t, dtype=float)
    tt = t - t.mean()
    w = 2 * np.pi * frequency
    design = np.column_stack([np.ones_like(tt), tt, np.cos(w * t), np.sin(w * t)])
    coef, *_ = np.linalg.lstsq(design, np.asarray(y, dtype=float), rcond=None)
    return 2.0 * float(np.hypot(coef[2], coef[3]))


def decimate_mean(t, y, report_rate: float):
    """Block means over ``1/report_rate`` seconds; block time is its mean time."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 2:
        return t.copy(), y.copy()
    fs = 1.0 / float(np.mean(np.diff(t)))
    m = int(round(fs / report_rate))
    if m <= 1:
        return t.copy(), y.copy()
    n = (t.size // m) * m
    return t[:n].reshape(-1, m).mean(axis=1), y[:n].reshape(-1, m).mean(axis=1)


def phase_to_temperature(series: PhaseSeries, coeff: float, t0_temp: float = 30.0,
                         report_rate: float | None = 1.0) -> TemperatureEstimate:
    """Temperature from phase change relative to the first shot.

    With ``report_rate`` set, block-mean decimation suppresses the acoustic
    and airflow components before reporting.
    """
    if coeff <= 0:
        raise ValueError("coeff must be positive")
    y = series.dphi_unwrapped
    temp = t0_temp + (y - y[0]) / coeff
    t = series.t
    if report_rate:
        t, temp = decimate_mean(t, temp, report_rate)
    return TemperatureEstimate(t, temp, float(coeff), float(t0_temp))


def golden_section(f, lo: float, hi: float, tol: float = 1e-3, max_iter: int = 200) -> tuple[float, float]:
    """Minimise a unimodal ``f`` on ``[lo, hi]``; returns ``(x, f(x))``."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    candidates = [(fc, c), (fd, d), (f(lo), lo), (f(hi), hi)]
    fx, x = min(candidates)
    return x, fx


def lag_sse(reference, measured, tau: float, dt: float, initial: float | None = None) -> float:
    r = core_temperature(reference, tau, dt, initial)
    d = r - np.asarray(measured, dtype=float)
    return float(d @ d)


def _scan_then_refine(objective, lo: float, hi: float, grid_step: float = 1.0) -> TauFit:
    """Coarse scan (step <= 1 s) to bracket the minimum, then golden section."""
    grid_step = min(grid_step, 1.0)
    grid = np.linspace(lo, hi, int(math.ceil((hi - lo) / grid_step)) + 1)
    sse = np.array([objective(g) for g in grid])
    i = int(np.argmin(sse))
    interior = (sse[1:-1] < sse[:-2]) & (sse[1:-1] <= sse[2:])
    n_minima = int(interior.sum()) + int(sse[0] < sse[1]) + int(sse[-1] < sse[-2])
    if n_minima > 1:
        warnings.warn(f"SSE(tau) has {n_minima} local minima on the coarse grid; "
                      "returning the global grid minimum", MultimodalityWarning, stacklevel=3)
        return TauFit(float(grid[i]), float(sse[i]), True)
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, grid.size - 1)]
    tau, best = golden_section(objective, a, b)
    return TauFit(float(tau), float(best), False)


def _tau_bounds(tau_range, dt: float) -> tuple[float, float]:
    lo, hi = map(float, tau_range)
    if not 0 < lo < hi:
        raise ValueError("tau_range must be positive and increasing")
    lo = max(lo, 10.0 * dt)
    if lo >= hi:
        raise ValueError(f"dt={dt} s is too coarse for tau_range {tau_range}")
    return lo, hi


def fit_time_constant(reference, measured, dt: float, tau_range: tuple[float, float] = (10.0, 300.0),
                      grid_step: float = 1.0, initial: float | None = None) -> TauFit:
    """Lag time constant minimising the squared error to ``measured``.

    A coarse scan (step <= 1 s) brackets the minimum, which golden-section
    search then refines. If the scan shows more than one local minimum the
    global grid minimum is returned with a :class:`MultimodalityWarning`.
    """
    lo, hi = _tau_bounds(tau_range, dt)
    return _scan_then_refine(lambda x: lag_sse(reference, measured, x, dt, initial), lo, hi, grid_step)


def heating_onset(reference, dt: float, min_slope: float = 0.01, min_duration: float = 10.0) -> int:
    """First index of a run where the reference rises faster than ``min_slope``."""
    ref = np.asarray(reference, dtype=float)
    if ref.size < 3:
        raise CalibrationUnavailable("reference series too short")
    rising = np.gradient(ref, dt) > min_slope
    need = max(1, int(math.ceil(min_duration / dt)))
    run = 0
    for k, r in enumerate(rising):
        run = run + 1 if r else 0
        if run >= need:
            return k - run + 1
    raise CalibrationUnavailable(f"no heating segment with slope > {min_slope} K/s "
                                 f"sustained for {min_duration} s")


def calibrate_coefficient(phase, reference, dt: float, tau: float,
                          min_slope: float = 0.01, min_duration: float = 10.0) -> float:
    """Lumped rad/K coefficient from a heating run.

    ``phase`` (unwrapped, rad) and ``reference`` (chamber, degC) share a grid.
    From the heating onset onward the phase change is regressed through the
    origin on the lagged reference change.
    """
    phase = np.asarray(phase, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if phase.shape != ref.shape:
        raise ValueError("phase and reference must be aligned")
    k0 = heating_onset(ref, dt, min_slope, min_duration)
    lagged = core_temperature(ref, tau, dt, ref[0])
    dT = lagged[k0:] - lagged[k0]
    dp = phase[k0:] - phase[k0]
    denom = float(dT @ dT)
    coeff = float(dT @ dp) / denom if denom > 0 else 0.0
    if not coeff > 0 or float(np.ptp(dp)) == 0.0:
        raise CalibrationUnavailable("phase shows no change over the heating segment")
    return coeff


@dataclass(frozen=True)
class Calibration:
    coefficient: float
    tau: float
    sse: float  # rad^2, phase residual over the heating segment


def calibrate(phase, reference, dt: float, tau_range: tuple[float, float] = (10.0, 300.0),
              min_slope: float = 0.01, min_duration: float = 10.0) -> Calibration:
    """Joint coefficient and lag fit on a heating run.

    For a given lag the best coefficient is a regression through the origin,
    so the phase residual is a function of the lag alone; that profile is
    minimised the same way as :func:`fit_time_constant`.
    """
    phase = np.asarray(phase, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if phase.shape != ref.shape:
        raise ValueError("phase and reference must be aligned")
    k0 = heating_onset(ref, dt, min_slope, min_duration)
    dp = phase[k0:] - phase[k0]
    if float(np.ptp(dp)) == 0.0:
        raise CalibrationUnavailable("phase shows no change over the heating segment")

    def profile(tau):
        lagged = core_temperature(ref, tau, dt, ref[0])
        dT = lagged[k0:] - lagged[k0]
        return float(dp @ dp) - float(dT @ dp) ** 2 / float(dT @ dT)

    lo, hi = _tau_bounds(tau_range, dt)
    fit = _scan_then_refine(profile, lo, hi)
    coeff = calibrate_coefficient(phase, ref, dt, fit.tau, min_slope, min_duration)
    return Calibration(coeff, fit.tau, fit.sse)


def window_rates(reports: Sequence[WindowReport], coeff: float) -> np.ndarray:
    """Temperature rate (K/s) implied by each window slope."""
    return np.array([r.slope for r in reports]) / coeff
