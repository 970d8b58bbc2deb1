"""Matched filtering of received shots and reflection-event detection."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal


@dataclass
class Reflectogram:
    t_shot: float
    bins: np.ndarray  # (n_bins,) or (n_pol, n_bins)
    distance_step: float

    @property
    def distance(self) -> np.ndarray:
        return np.arange(self.bins.shape[-1]) * self.distance_step

    def magnitude(self) -> np.ndarray:
        """Bin magnitude, summed in power across polarization channels."""
        if self.bins.ndim == 1:
            return np.abs(self.bins)
        return np.sqrt(np.sum(np.abs(self.bins) ** 2, axis=0))

    def phase(self) -> np.ndarray:
        """Bin phase, taken from the stronger polarization channel per bin."""
        if self.bins.ndim == 1:
            return np.angle(self.bins)
        pick = np.argmax(np.abs(self.bins), axis=0)
        return np.angle(np.take_along_axis(self.bins, pick[None], axis=0)[0])


def correlate_direct(rx: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """``sum_m rx[k+m] * conj(ref[m])`` by explicit summation; reference oracle."""
    rx = np.asarray(rx, dtype=np.complex128)
    ref = np.asarray(reference, dtype=np.complex128)
    n_bins = rx.size - ref.size + 1
    win = np.lib.stride_tricks.sliding_window_view(rx, ref.size)[:n_bins]
    return win @ np.conj(ref)


def correlate_shot(rx, reference, *, distance_step: float, t_shot: float = 0.0,
                   method: str = "fft") -> Reflectogram:
    """Complex reflectogram normalised by the reference energy.

    A lossless reflector (unit tap) gives a main peak of exactly 1, so
    20*log10 of a bin reads directly as return loss.
    """
    rx = np.asarray(rx)
    ref = np.asarray(reference, dtype=np.complex128)
    if ref.ndim != 1 or ref.size == 0:
        raise ValueError("reference must be a nonempty 1-D array")
    if rx.shape[-1] < ref.size:
        raise ValueError(f"rx length {rx.shape[-1]} is shorter than reference length {ref.size}")
    energy = float(np.sum(np.abs(ref) ** 2))
    rows = np.atleast_2d(rx)
    if method == "fft":
        out = np.stack([signal.correlate(r, ref, mode="valid", method="fft") for r in rows])
    elif method == "direct":
        out = np.stack([correlate_direct(r, ref) for r in rows])
    else:
        raise ValueError("method must be 'fft' or 'direct'")
    out /= energy
    return Reflectogram(float(t_shot), out[0] if rx.ndim == 1 else out, distance_step)


@dataclass
class ReturnLossTrace:
    distance_m: np.ndarray
    return_loss_db: np.ndarray
    bins: np.ndarray  # complex, stronger polarization channel
    distance_step: float

    def to_csv(self, path: str | Path) -> None:
        np.savetxt(path, np.column_stack([self.distance_m, self.return_loss_db]), delimiter=",",
                   fmt="%.6f", header="distance_m,return_loss_db", comments="")


def return_loss_trace(refl: Reflectogram, reference_level: float = 1.0) -> ReturnLossTrace:
    """``20*log10(|bin| / reference_level)``; empty bins map to ``-inf``."""
    if reference_level <= 0:
        raise ValueError("reference_level must be positive")
    mag = refl.magnitude()
    with np.errstate(divide="ignore"):
        db = 20 * np.log10(mag / reference_level)
    if refl.bins.ndim == 1:
        bins = refl.bins
    else:
        pick = np.argmax(np.abs(refl.bins), axis=0)
        bins = np.take_along_axis(refl.bins, pick[None], axis=0)[0]
    return ReturnLossTrace(refl.distance, db, bins, refl.distance_step)


@dataclass(frozen=True)
class DetectedEvent:
    index: int
    distance_m: float
    peak_magnitude_db: float
    phase_rad: float


def detect_events(trace: ReturnLossTrace, min_prominence_db: float = 20.0,
                  guard_bins: int = 10) -> list[DetectedEvent]:
    """Local maxima standing ``min_prominence_db`` above the median floor.

    Peaks closer than ``guard_bins`` are resolved in favour of the stronger.
    """
    if min_prominence_db <= 0:
        raise ValueError("min_prominence_db must be positive")
    db = np.asarray(trace.return_loss_db, dtype=float)
    finite = np.isfinite(db)
    if not finite.any():
        return []
    floor = float(np.median(db[finite]))
    clean = np.where(finite, db, floor - 1000.0)
    peaks, _ = signal.find_peaks(clean, height=floor + min_prominence_db,
                                 distance=max(1, int(guard_bins)))
    return [DetectedEvent(int(i), i * trace.distance_step, float(db[i]), float(np.angle(trace.bins[i])))
            for i in peaks]


def events_to_csv(events: list[DetectedEvent], path: str | Path) -> None:
    rows = np.array([[e.distance_m, e.peak_magnitude_db, e.phase_rad] for e in events]).reshape(-1, 3)
    np.savetxt(path, rows, delimiter=",", fmt="%.6f",
               header="distance_m,magnitude_db,phase_rad", comments="")
