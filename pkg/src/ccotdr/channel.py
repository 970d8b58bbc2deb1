"""Per-shot propagation and homodyne reception.

Two fidelity levels share one stimulus path:

* full mode convolves the laser-phase-noisy transmit field with the fiber
  impulse response, mixes with the local oscillator and adds receiver noise;
* fast mode skips the waveform and emits one phasor per monitored reflector
  carrying the same scenario phase, differential laser phase and the
  post-correlation noise that full mode would show.

Random streams are keyed on ``(seed, stream, index)`` so results never depend
on how shots are scheduled across workers.
"""
from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterator, Sequence

import numpy as np
from scipy import signal

from .fibermodel import FiberLayout, GroundTruth, generate_ground_truth
from .waveform import ProbeFrame, build_probe_frame

if TYPE_CHECKING:
    from .config import RunConfig

FULL = "full"
FAST = "fast"

STREAM_SPECKLE = 1
STREAM_AIRFLOW = 2
STREAM_SHOTS = 3
STREAM_JONES = 4

FAST_BLOCK = 1 << 16


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


@dataclass(frozen=True)
class NoiseSpec:
    laser_linewidth: float = 100.0  # Hz
    receiver_snr: float = 30.0  # dB per sample, relative to the strongest connector; inf disables
    rng_seed: int | None = None

    def validate(self) -> None:
        if self.laser_linewidth < 0:
            raise ValueError("laser_linewidth must be non-negative")


def residual_phase_std(linewidth: float, delay: float) -> float:
    """Std of the Wiener phase increment over ``delay`` seconds."""
    return float(np.sqrt(2 * np.pi * linewidth * delay))


@dataclass
class ImpulseResponse:
    taps: np.ndarray  # (n_pol, n_taps)
    weights: np.ndarray  # heated-section phase fraction per tap
    sample_rate: float
    distance_step: float
    event_indices: tuple[int, ...]
    event_amplitudes: tuple[complex, ...]
    connector_amplitude: float

    @property
    def n_taps(self) -> int:
        return self.taps.shape[-1]

    @property
    def n_pol(self) -> int:
        return self.taps.shape[0]

    def rotated(self, dphi: float) -> np.ndarray:
        if dphi == 0:
            return self.taps
        return self.taps * np.exp(1j * dphi * self.weights)


def build_impulse_response(layout: FiberLayout, sample_rate: float = 5.0e8,
                           seed: int | None = None, polarization: str = "single") -> ImpulseResponse:
    """Static taps: connectors at their distance bins plus frozen Rayleigh speckle."""
    layout.validate()
    dz = layout.distance_step(sample_rate)
    n_taps = layout.distance_index(layout.fiber_length, sample_rate) + 1
    taps = np.zeros(n_taps, dtype=np.complex128)
    weight_num = np.zeros(n_taps)
    weight_den = np.zeros(n_taps)

    ray = layout.rayleigh
    if ray.enabled and ray.mean_return_loss_db_per_cell > -np.inf:
        if ray.cell_length < dz * (1 - 1e-9):
            raise ValueError(f"cell_length {ray.cell_length} m is below one distance sample ({dz:.4f} m)")
        cell_seed = ray.seed if ray.seed is not None else (0 if seed is None else seed)
        rng = stream(cell_seed, STREAM_SPECKLE)
        n_cells = int(np.floor(layout.fiber_length / ray.cell_length + 1e-9))
        centers = (np.arange(n_cells) + 0.5) * ray.cell_length
        idx = np.floor(centers / dz + 1e-9).astype(int)
        scale = np.sqrt(10 ** (ray.mean_return_loss_db_per_cell / 10) / 2)
        amp = scale * (rng.standard_normal(n_cells) + 1j * rng.standard_normal(n_cells))
        np.add.at(taps, idx, amp)
        np.add.at(weight_num, idx, np.abs(amp) ** 2 * layout.phase_weight(centers))
        np.add.at(weight_den, idx, np.abs(amp) ** 2)

    event_idx = []
    for ev in layout.events:
        i = layout.distance_index(ev.position, sample_rate)
        event_idx.append(i)
        taps[i] += ev.amplitude
        weight_den[i] += ev.amplitude ** 2
    # An event bin takes the event's own weight so reflectors at the section
    # edges see exactly none or all of the heated-section phase.
    for ev, i in zip(layout.events, event_idx):
        weight_num[i] = float(layout.phase_weight(ev.position)) * weight_den[i]
    with np.errstate(invalid="ignore", divide="ignore"):
        weights = np.where(weight_den > 0, weight_num / weight_den, 0.0)

    taps = taps[None, :]
    if polarization == "dual":
        jrng = stream(0 if seed is None else seed, STREAM_JONES)
        theta = jrng.uniform(0, np.pi / 2, n_taps)
        psi = jrng.uniform(0, 2 * np.pi, n_taps)
        taps = np.vstack([taps[0] * np.cos(theta), taps[0] * np.sin(theta) * np.exp(1j * psi)])
    elif polarization != "single":
        raise ValueError("polarization must be 'single' or 'dual'")

    strongest = max((ev.amplitude for ev in layout.events), default=1.0)
    amps = tuple(complex(ev.amplitude) for ev in layout.events)
    return ImpulseResponse(taps, weights, sample_rate, dz, tuple(event_idx), amps, strongest)


@dataclass
class ShotRecord:
    t_shot: float
    mode: str
    rx_samples: np.ndarray | None = None
    reflector_phasors: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in (FULL, FAST):
            raise ValueError(f"unknown mode {self.mode!r}")
        has_rx = self.rx_samples is not None
        has_ph = self.reflector_phasors is not None
        if has_rx == has_ph or has_rx != (self.mode == FULL):
            raise ValueError("full shots carry rx_samples only, fast shots reflector_phasors only")


def _noise_sigma(ir: ImpulseResponse, noise: NoiseSpec) -> float:
    if not np.isfinite(noise.receiver_snr):
        return 0.0
    return ir.connector_amplitude * 10 ** (-noise.receiver_snr / 20)


def simulate_shot(frame: ProbeFrame, ir: ImpulseResponse, dphi: float, noise: NoiseSpec,
                  t_shot: float = 0.0, rng: np.random.Generator | None = None) -> ShotRecord:
    """One received frame in full mode."""
    if frame.samples.size - frame.n_signal + 1 < ir.n_taps:
        raise ValueError("frame zero padding does not cover the impulse response")
    rng = rng or np.random.default_rng(0)
    n = frame.samples.size
    tx = frame.samples
    lo = None
    if noise.laser_linewidth > 0:
        step = np.sqrt(2 * np.pi * noise.laser_linewidth / frame.sample_rate)
        phase = np.cumsum(rng.standard_normal(n)) * step
        lo = np.exp(1j * phase)
        tx = tx * lo
    taps = ir.rotated(dphi)
    rx = np.stack([signal.fftconvolve(tx, h)[:n] for h in taps])
    if lo is not None:
        rx *= np.conj(lo)
    sigma = _noise_sigma(ir, noise)
    if sigma > 0:
        rx += sigma / np.sqrt(2) * (rng.standard_normal(rx.shape) + 1j * rng.standard_normal(rx.shape))
    return ShotRecord(float(t_shot), FULL, rx_samples=rx)


@dataclass
class ShotRun(Sequence):
    """Columnar container for a run; indexing yields :class:`ShotRecord`."""
    mode: str
    t: np.ndarray
    data: np.ndarray  # full: (n, n_pol, n_samples); fast: (n, 2)
    shot_rate: float
    sample_rate: float
    event_taps: tuple[int, int]
    truth: GroundTruth | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return int(self.t.size)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        if self.mode == FULL:
            return ShotRecord(float(self.t[i]), FULL, rx_samples=self.data[i])
        return ShotRecord(float(self.t[i]), FAST, reflector_phasors=self.data[i])

    def __iter__(self) -> Iterator[ShotRecord]:
        for i in range(len(self)):
            yield self[i]

    @property
    def phasors(self) -> np.ndarray:
        if self.mode != FAST:
            raise AttributeError("phasors exist in fast mode only")
        return self.data

    def to_phasor_csv(self, path: str | Path) -> None:
        p = self.phasors
        data = np.column_stack([self.t, p[:, 0].real, p[:, 0].imag, p[:, 1].real, p[:, 1].imag])
        np.savetxt(path, data, delimiter=",", fmt="%.9g", header="t_s,re1,im1,re2,im2", comments="")


def shot_times(duration: float, shot_rate: float) -> np.ndarray:
    if shot_rate <= 0:
        raise ValueError("shot_rate must be positive")
    n = int(np.floor(duration * shot_rate + 1e-9))
    return np.arange(n) / shot_rate


def event_bias(frame: ProbeFrame, ir: ImpulseResponse, pair: tuple[int, int]) -> np.ndarray:
    """Static unit phasor that speckle and code sidelobes add at each monitored bin.

    Taken from one noiseless full-mode correlation at zero scenario phase, so
    fast-mode phasors carry the same fixed interference offset as full mode.
    """
    from .correlator import correlate_shot

    quiet = NoiseSpec(laser_linewidth=0.0, receiver_snr=np.inf)
    rx = simulate_shot(frame, ir, 0.0, quiet).rx_samples
    bins = np.atleast_2d(correlate_shot(rx, frame.reference, distance_step=ir.distance_step).bins)
    idx = [ir.event_indices[i] for i in pair]
    vals = bins[:, idx]
    pick = np.argmax(np.abs(vals), axis=0)
    vals = vals[pick, [0, 1]]
    return vals / np.abs(vals)


def _fast_block(seed: int, block: int, dphi: np.ndarray, layout: FiberLayout,
                pair: tuple[int, int], noise: NoiseSpec, sigma_bin: float,
                bias: np.ndarray | None = None) -> np.ndarray:
    rng = stream(seed, STREAM_SHOTS, block)
    n = dphi.size
    ev_a, ev_b = (layout.events[i] for i in pair)
    tau_a = layout.two_way_delay(ev_a.position)
    tau_b = layout.two_way_delay(ev_b.position)
    std_a = residual_phase_std(noise.laser_linewidth, tau_a)
    std_ab = residual_phase_std(noise.laser_linewidth, abs(tau_b - tau_a))
    theta_a = std_a * rng.standard_normal(n)
    theta_b = theta_a + std_ab * rng.standard_normal(n)
    psi_a = theta_a + float(layout.phase_weight(ev_a.position)) * dphi
    psi_b = theta_b + float(layout.phase_weight(ev_b.position)) * dphi
    out = np.column_stack([np.exp(1j * psi_a), np.exp(1j * psi_b)])
    if bias is not None:
        out *= bias
    if sigma_bin > 0:
        amp = np.array([ev_a.amplitude, ev_b.amplitude])
        g = rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2))
        out = out * (1 + g * (sigma_bin / np.sqrt(2)) / amp)
        out /= np.abs(out)
    return out


def simulate_run(config: "RunConfig", truth: GroundTruth | None = None,
                 threads: int = 1) -> ShotRun:
    """All shots of a run at a uniform shot rate over the scenario duration."""
    frame = build_probe_frame(config.probe)
    layout = config.layout
    layout.validate()
    noise = config.noise
    noise.validate()
    fs = config.probe.sample_rate
    mode = config.mode
    if mode not in (FULL, FAST):
        raise ValueError(f"mode must be 'full' or 'fast', got {mode!r}")
    if mode == FULL and config.shot_rate * frame.frame_period > 1 + 1e-12:
        raise ValueError(f"shot_rate {config.shot_rate} Hz exceeds 1/frame_period "
                         f"= {1 / frame.frame_period:.1f} Hz in full mode")
    if truth is None:
        t = shot_times(config.scenario.duration, config.shot_rate)
        truth = generate_ground_truth(config.scenario, t,
                                      np.random.SeedSequence([config.seed, STREAM_AIRFLOW]))
    t = truth.t
    dphi = truth.phase_diff_true
    pair = layout.monitored_events()
    shot_seed = config.seed if noise.rng_seed is None else noise.rng_seed
    ir = build_impulse_response(layout, fs, seed=config.seed, polarization=config.polarization)
    event_taps = (ir.event_indices[pair[0]], ir.event_indices[pair[1]])

    workers = max(1, int(threads))
    if mode == FAST:
        sigma_bin = _noise_sigma(ir, noise) / np.sqrt(frame.energy)
        bias = event_bias(frame, ir, pair)
        starts = range(0, t.size, FAST_BLOCK)

        def work(start):
            blk = start // FAST_BLOCK
            return _fast_block(shot_seed, blk, dphi[start:start + FAST_BLOCK], layout, pair, noise, sigma_bin, bias)
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(work, starts))
        data = np.concatenate(parts) if parts else np.zeros((0, 2), dtype=np.complex128)
    else:
        def work(k):
            rng = stream(shot_seed, STREAM_SHOTS, k)
            return simulate_shot(frame, ir, float(dphi[k]), noise, float(t[k]), rng).rx_samples
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(work, range(t.size)))
        shape = (0, ir.n_pol, frame.samples.size)
        data = np.stack(parts) if parts else np.zeros(shape, dtype=np.complex128)
    return ShotRun(mode, t, data, float(config.shot_rate), fs, event_taps, truth)


# Shot archive layout (all little-endian):
#   8 bytes   magic b"CCOTDRSA"
#   uint32    header length H
#   H bytes   UTF-8 JSON header: version, mode, shot_rate, sample_rate,
#             n_shots, n_pol, n_values, event_taps
#   n_shots records of: float64 t_shot, then n_values complex values as
#             interleaved float32 (re, im). Fast mode: n_pol=1, n_values=2
#             (the two reflector phasors). Full mode: n_values=n_pol*n_samples
#             in polarization-major order.
ARCHIVE_MAGIC = b"CCOTDRSA"
ARCHIVE_VERSION = 1


def _record_dtype(n_values: int) -> np.dtype:
    return np.dtype([("t", "<f8"), ("payload", "<f4", (2 * n_values,))])


def write_shot_archive(run: ShotRun, path: str | Path) -> None:
    n = len(run)
    flat = run.data.reshape(n, -1) if n else run.data.reshape(0, -1)
    n_values = flat.shape[1]
    header = {
        "version": ARCHIVE_VERSION,
        "mode": run.mode,
        "shot_rate": run.shot_rate,
        "sample_rate": run.sample_rate,
        "n_shots": n,
        "n_pol": 1 if run.mode == FAST else int(run.data.shape[1]),
        "n_values": int(n_values),
        "event_taps": list(run.event_taps),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    rec = np.empty(n, dtype=_record_dtype(n_values))
    rec["t"] = run.t
    rec["payload"][:, 0::2] = flat.real
    rec["payload"][:, 1::2] = flat.imag
    with open(path, "wb") as fh:
        fh.write(ARCHIVE_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(rec.tobytes())


def read_shot_archive(path: str | Path) -> ShotRun:
    raw = Path(path).read_bytes()
    if raw[:8] != ARCHIVE_MAGIC:
        raise ValueError(f"{path} is not a shot archive")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen])
    if header["version"] != ARCHIVE_VERSION:
        raise ValueError(f"unsupported archive version {header['version']}")
    n, n_values = header["n_shots"], header["n_values"]
    rec = np.frombuffer(raw, dtype=_record_dtype(n_values), count=n, offset=12 + hlen)
    pay = rec["payload"].astype(np.float64)
    data = pay[:, 0::2] + 1j * pay[:, 1::2]
    if header["mode"] == FULL:
        data = data.reshape(n, header["n_pol"], -1)
    return ShotRun(header["mode"], rec["t"].copy(), data, header["shot_rate"],
                   header["sample_rate"], tuple(header["event_taps"]))
