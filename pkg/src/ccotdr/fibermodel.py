"""Fiber under test and the time-dependent stimuli applied to it.

The heated section accrues the differential phase linearly along its
length, so a reflector at the section start sees none of it and one at the
section end sees all of it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .waveform import SPEED_OF_LIGHT

PC = "PC"
APC = "APC"


@dataclass(frozen=True)
class FiberEvent:
    position: float
    kind: str = PC
    return_loss: float = -45.0  # dB

    @property
    def amplitude(self) -> float:
        return 10.0 ** (self.return_loss / 20.0)


@dataclass(frozen=True)
class RayleighCells:
    cell_length: float = 0.2
    mean_return_loss_db_per_cell: float = -80.0
    seed: int | None = None
    enabled: bool = True


@dataclass(frozen=True)
class HeatedSection:
    start: float = 39.0
    end: float = 234.0

    @property
    def length(self) -> float:
        return self.end - self.start


def _default_events() -> tuple[FiberEvent, ...]:
    return (
        FiberEvent(39.0, PC, -45.0),
        FiberEvent(234.0, PC, -45.0),
        FiberEvent(250.0, APC, -55.0),
    )


@dataclass(frozen=True)
class FiberLayout:
    events: tuple[FiberEvent, ...] = field(default_factory=_default_events)
    fiber_length: float = 250.0
    group_index: float = 1.5
    wavelength: float = 1.55e-6
    rayleigh: RayleighCells = field(default_factory=RayleighCells)
    heated_section: HeatedSection = field(default_factory=HeatedSection)

    def validate(self) -> None:
        if self.fiber_length <= 0:
            raise ValueError("fiber_length must be positive")
        positions = [e.position for e in self.events]
        if any(b <= a for a, b in zip(positions, positions[1:])):
            raise ValueError("event positions must be strictly increasing")
        if any(p < 0 or p > self.fiber_length for p in positions):
            raise ValueError("event positions must lie within [0, fiber_length]")
        for e in self.events:
            if e.kind not in (PC, APC):
                raise ValueError(f"unknown event type {e.kind!r}")
        hs = self.heated_section
        if not (0 <= hs.start < hs.end <= self.fiber_length):
            raise ValueError("heated_section needs 0 <= start < end <= fiber_length")
        if not 1.4 <= self.group_index <= 1.6:
            raise ValueError("group_index must lie in [1.4, 1.6]")
        if self.wavelength <= 0:
            raise ValueError("wavelength must be positive")
        if self.rayleigh.cell_length <= 0:
            raise ValueError("rayleigh.cell_length must be positive")

    def distance_step(self, sample_rate: float) -> float:
        return SPEED_OF_LIGHT / (2.0 * self.group_index * sample_rate)

    def distance_index(self, position: float, sample_rate: float) -> int:
        # Floor with a small guard so positions on an exact bin stay there.
        return int(math.floor(position / self.distance_step(sample_rate) + 1e-9))

    def two_way_delay(self, position: float) -> float:
        return 2.0 * self.group_index * position / SPEED_OF_LIGHT

    def phase_weight(self, position):
        """Fraction of the heated-section phase seen by a return from ``position``."""
        hs = self.heated_section
        return np.clip((np.asarray(position, dtype=float) - hs.start) / hs.length, 0.0, 1.0)

    def monitored_events(self) -> tuple[int, int]:
        """Indices of the events closest to the heated-section start and end."""
        if len(self.events) < 2:
            raise ValueError("layout needs at least two events to monitor")
        pos = np.array([e.position for e in self.events])
        a = int(np.argmin(np.abs(pos - self.heated_section.start)))
        b = int(np.argmin(np.abs(pos - self.heated_section.end)))
        if a == b:
            raise ValueError("heated section is not bracketed by two distinct events")
        return a, b


@dataclass(frozen=True)
class Stage:
    duration: float
    setpoint: float
    fan_on: bool = False


@dataclass(frozen=True)
class Acoustic:
    frequency: float = 400.0
    phase_amp_pp: float = 0.25
    enabled: bool = True


@dataclass(frozen=True)
class Airflow:
    """Fan-driven phase noise; only present while a stage has the fan on."""
    bandwidth: float = 400.0
    rms: float = 0.1
    order: int = 10
    enabled: bool = True


@dataclass(frozen=True)
class ScenarioProfile:
    stages: tuple[Stage, ...] = ()
    heat_slew_max: float = 0.09
    cool_slew_max: float = 0.21
    heat_approach_tau: float = 65.0
    cool_approach_tau: float = 0.0
    acoustic: Acoustic = field(default_factory=Acoustic)
    airflow: Airflow = field(default_factory=Airflow)
    thermal_time_constant: float = 73.0
    phase_temp_coeff: float = 1.661e4

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.stages))

    @property
    def initial_temperature(self) -> float:
        return self.stages[0].setpoint

    def validate(self) -> None:
        if not self.stages:
            raise ValueError("stages must not be empty")
        for s in self.stages:
            if s.duration <= 0:
                raise ValueError("stage durations must be positive")
            if not 0 <= s.setpoint <= 100:
                raise ValueError("stage setpoints must lie within [0, 100] degC")
        if self.heat_slew_max <= 0 or self.cool_slew_max <= 0:
            raise ValueError("slew limits must be positive")
        if self.heat_approach_tau < 0 or self.cool_approach_tau < 0:
            raise ValueError("approach time constants must be non-negative")
        if self.phase_temp_coeff <= 0:
            raise ValueError("phase_temp_coeff must be positive")
        if self.thermal_time_constant <= 0:
            raise ValueError("thermal_time_constant must be positive")

    def fan_mask(self, t: np.ndarray) -> np.ndarray:
        edges = np.cumsum([s.duration for s in self.stages])
        idx = np.minimum(np.searchsorted(edges, t, side="right"), len(self.stages) - 1)
        fan = np.array([s.fan_on for s in self.stages], dtype=bool)
        return fan[idx]


@dataclass
class GroundTruth:
    t: np.ndarray
    chamber_temp: np.ndarray
    core_temp: np.ndarray
    phase_diff_true: np.ndarray

    def __post_init__(self):
        n = len(self.t)
        if not all(len(a) == n for a in (self.chamber_temp, self.core_temp, self.phase_diff_true)):
            raise ValueError("ground-truth arrays must have equal length")

    def to_csv(self, path: str | Path) -> None:
        data = np.column_stack([self.t, self.chamber_temp, self.core_temp, self.phase_diff_true])
        np.savetxt(path, data, delimiter=",", fmt="%.10g",
                   header="t_s,chamber_C,core_C,phase_rad", comments="")

    @classmethod
    def from_csv(cls, path: str | Path) -> "GroundTruth":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(*(data[:, i].copy() for i in range(4)))


def _uniform_step(t_grid: np.ndarray) -> float:
    if t_grid.size < 2:
        return 0.0
    dt = np.diff(t_grid)
    if np.any(dt <= 0) or np.ptp(dt) > 1e-6 * dt[0]:
        raise ValueError("t_grid must be uniform and strictly increasing")
    return float(dt.mean())


def _approach(t: np.ndarray, start: float, target: float, rate: float, tau: float) -> np.ndarray:
    """Trajectory moving from ``start`` toward ``target``.

    The rate is the smaller of the slew cap and the proportional demand
    ``gap / tau``: a linear ramp until the gap is ``rate * tau``, then an
    exponential approach. ``tau == 0`` gives ramp-and-hold.
    """
    gap0 = target - start
    if gap0 == 0:
        return np.full(t.shape, start)
    sign = math.copysign(1.0, gap0)
    knee = rate * tau
    t_lin = max(0.0, (abs(gap0) - knee) / rate)
    gap = np.where(t < t_lin, abs(gap0) - rate * t, 0.0)
    if tau > 0:
        tail = min(abs(gap0), knee) * np.exp(-(t - t_lin) / tau)
        gap = np.where(t < t_lin, gap, tail)
    else:
        gap = np.maximum(gap, 0.0)
    return target - sign * gap


def chamber_temperature(stages, t_grid, heat_slew_max: float = 0.09,
                        cool_slew_max: float = 0.21, heat_approach_tau: float = 0.0,
                        cool_approach_tau: float = 0.0,
                        initial: float | None = None) -> np.ndarray:
    """Chamber air temperature for a stage sequence, evaluated on ``t_grid``."""
    if not stages:
        raise ValueError("stages must not be empty")
    t_grid = np.asarray(t_grid, dtype=float)
    _uniform_step(t_grid)
    out = np.empty_like(t_grid)
    temp = stages[0].setpoint if initial is None else float(initial)
    t0 = 0.0
    for i, st in enumerate(stages):
        t1 = t0 + st.duration
        last = i == len(stages) - 1
        sel = (t_grid >= t0) & ((t_grid < t1) | last)
        heating = st.setpoint > temp
        rate = heat_slew_max if heating else cool_slew_max
        tau = heat_approach_tau if heating else cool_approach_tau
        out[sel] = _approach(t_grid[sel] - t0, temp, st.setpoint, rate, tau)
        temp = float(_approach(np.array([st.duration]), temp, st.setpoint, rate, tau)[0])
        t0 = t1
    return out


def core_temperature(chamber, tau: float, dt: float, initial: float | None = None) -> np.ndarray:
    """First-order lag ``y[k+1] = y[k] + dt/tau * (x[k] - y[k])``."""
    if tau <= 0 or dt <= 0:
        raise ValueError("tau and dt must be positive")
    if dt > tau / 10.0:
        raise ValueError(f"dt={dt} exceeds tau/10={tau / 10.0}; lag dynamics would alias")
    x = np.asarray(chamber, dtype=float)
    if x.size == 0:
        return x.copy()
    y0 = x[0] if initial is None else float(initial)
    a = dt / tau
    # Filtering the deviation keeps an equilibrium input exactly constant.
    y, _ = signal.lfilter([0.0, a], [1.0, a - 1.0], x - y0, zi=[0.0])
    return y + y0


def airflow_noise(n: int, sample_rate: float, airflow: Airflow, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean Gaussian noise, Butterworth-limited to the airflow bandwidth."""
    white = rng.standard_normal(n)
    if n == 0 or airflow.rms == 0:
        return np.zeros(n)
    if airflow.bandwidth < sample_rate / 2:
        sos = signal.butter(airflow.order, airflow.bandwidth, fs=sample_rate, output="sos")
        white = signal.sosfilt(sos, white)
    std = white.std()
    return white * (airflow.rms / std) if std > 0 else white


def true_phase_difference(profile: ScenarioProfile, core_temp, t_grid,
                          rng_seed: int | np.random.SeedSequence | None = 0) -> np.ndarray:
    """Differential phase from temperature, acoustic tone and airflow."""
    t = np.asarray(t_grid, dtype=float)
    core = np.asarray(core_temp, dtype=float)
    if core.shape != t.shape:
        raise ValueError("core_temp and t_grid must be aligned")
    if t.size == 0:
        return np.zeros(0)
    dphi = profile.phase_temp_coeff * (core - core[0])
    ac = profile.acoustic
    if ac.enabled and ac.phase_amp_pp:
        dphi = dphi + 0.5 * ac.phase_amp_pp * np.sin(2 * np.pi * ac.frequency * t)
    if profile.airflow.enabled and profile.stages:
        fan = profile.fan_mask(t)
        if fan.any() and t.size > 1:
            rng = np.random.default_rng(rng_seed)
            fs = 1.0 / _uniform_step(t)
            dphi = dphi + fan * airflow_noise(t.size, fs, profile.airflow, rng)
    return dphi


def generate_ground_truth(profile: ScenarioProfile, t_grid,
                          rng_seed: int | np.random.SeedSequence | None = 0) -> GroundTruth:
    profile.validate()
    t = np.asarray(t_grid, dtype=float)
    chamber = chamber_temperature(profile.stages, t, profile.heat_slew_max, profile.cool_slew_max,
                                  profile.heat_approach_tau, profile.cool_approach_tau)
    if t.size > 1:
        core = core_temperature(chamber, profile.thermal_time_constant, _uniform_step(t),
                                initial=profile.initial_temperature)
    else:
        core = chamber.copy()
    return GroundTruth(t, chamber, core, true_phase_difference(profile, core, t, rng_seed))


def derived_dn_dt(phase_temp_coeff: float, wavelength: float, section_length: float) -> float:
    """Thermo-optic coefficient from the two-way phase sensitivity."""
    if phase_temp_coeff <= 0 or wavelength <= 0 or section_length <= 0:
        raise ValueError("all arguments must be positive")
    return phase_temp_coeff * wavelength / (4 * math.pi * section_length)
