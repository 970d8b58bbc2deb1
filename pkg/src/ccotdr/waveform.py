"""Probe synthesis: PRBS generation, BPSK mapping and zero-padded frames.

Polynomials are bitmasks over the coefficients of the characteristic
polynomial, bit ``k`` standing for ``x**k``; ``x^9 + x^5 + 1`` is ``0x221``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

# Known primitive polynomials; anything else is checked by walking the states.
PRIMITIVE_POLYNOMIALS: dict[int, tuple[int, ...]] = {
    3: (0b1101, 0b1011),
    7: (0xC1, 0x83, 0x89, 0x91),
    9: (0x221, 0x211),
    11: (0xA01, 0x805),
}

DEFAULT_POLYNOMIAL = 0x221
DEFAULT_SEED = 0x1FF


def _step(state: int, tap_mask: int, order: int) -> tuple[int, int]:
    out = state & 1
    feedback = bin(state & tap_mask).count("1") & 1
    return (state >> 1) | (feedback << (order - 1)), out


@lru_cache(maxsize=64)
def lfsr_period(order: int, polynomial: int) -> int:
    """Number of steps before the all-ones state recurs."""
    tap_mask = polynomial & ((1 << order) - 1)
    start = state = (1 << order) - 1
    for n in range(1, 1 << order):
        state, _ = _step(state, tap_mask, order)
        if state == start:
            return n
    return 1 << order  # unreachable for a valid feedback polynomial


def is_primitive(order: int, polynomial: int) -> bool:
    if order < 2 or not (polynomial >> order) & 1 or not polynomial & 1:
        return False
    if polynomial >> (order + 1):
        return False
    if polynomial in PRIMITIVE_POLYNOMIALS.get(order, ()):
        return True
    return lfsr_period(order, polynomial) == (1 << order) - 1


def gen_prbs(order: int = 9, polynomial: int = DEFAULT_POLYNOMIAL,
             seed: int | None = None) -> np.ndarray:
    """One period of the maximal-length sequence as a uint8 bit array.

    ``seed`` defaults to the all-ones register (0x1FF for order 9).

    The register holds ``a[t] .. a[t+order-1]`` in bits ``0 .. order-1`` and
    obeys ``a[t+order] = sum(p_i * a[t+i]) mod 2`` for the polynomial
    coefficients ``p_i`` below the leading term.
    """
    if seed is None:
        seed = (1 << order) - 1
    if seed == 0 or seed >> order:
        raise ValueError(f"seed must be a nonzero {order}-bit value, got {seed:#x}")
    if not is_primitive(order, polynomial):
        raise ValueError(f"polynomial {polynomial:#x} is not primitive for order {order}")
    tap_mask = polynomial & ((1 << order) - 1)
    n = (1 << order) - 1
    bits = np.empty(n, dtype=np.uint8)
    state = seed
    for i in range(n):
        state, bits[i] = _step(state, tap_mask, order)
    return bits


def required_pad_samples(fiber_length: float, group_index: float,
                         sample_rate: float) -> int:
    """Zero padding that covers the round trip through ``fiber_length``."""
    return math.ceil(2.0 * group_index * fiber_length / SPEED_OF_LIGHT * sample_rate)


@dataclass(frozen=True)
class ProbeSpec:
    prbs_order: int = 9
    symbol_rate: float = 1.0e8
    sample_rate: float = 5.0e8
    zero_pad_samples: int = 1251  # 250 m at group index 1.5
    lfsr_polynomial: int = DEFAULT_POLYNOMIAL
    lfsr_seed: int = DEFAULT_SEED

    @property
    def samples_per_symbol(self) -> int:
        return int(round(self.sample_rate / self.symbol_rate))

    @property
    def n_symbols(self) -> int:
        return (1 << self.prbs_order)

    def validate(self) -> None:
        if self.symbol_rate <= 0 or self.sample_rate <= 0:
            raise ValueError("symbol_rate and sample_rate must be positive")
        ratio = self.sample_rate / self.symbol_rate
        if ratio < 1 or abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("sample_rate must be an integer multiple of symbol_rate")
        if self.zero_pad_samples < 0:
            raise ValueError("zero_pad_samples must be non-negative")
        if self.lfsr_seed == 0 or self.lfsr_seed >> self.prbs_order:
            raise ValueError("lfsr_seed must be a nonzero value of prbs_order bits")
        if not is_primitive(self.prbs_order, self.lfsr_polynomial):
            raise ValueError("lfsr_polynomial is not primitive for prbs_order")


@dataclass(frozen=True)
class ProbeFrame:
    symbols: np.ndarray
    samples: np.ndarray
    sample_rate: float
    samples_per_symbol: int
    spec: ProbeSpec = field(repr=False)

    @property
    def frame_period(self) -> float:
        return self.samples.size / self.sample_rate

    @property
    def n_signal(self) -> int:
        return self.symbols.size * self.samples_per_symbol

    @property
    def reference(self) -> np.ndarray:
        """Symbol region of the transmit samples, used as correlation reference."""
        return self.samples[: self.n_signal]

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.reference) ** 2))

    def export(self, path: str | Path) -> None:
        """Write samples as interleaved little-endian float32 (re, im)."""
        out = np.empty(2 * self.samples.size, dtype="<f4")
        out[0::2] = self.samples.real
        out[1::2] = self.samples.imag
        Path(path).write_bytes(out.tobytes())


def load_frame_samples(path: str | Path) -> np.ndarray:
    raw = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    return raw[0::2].astype(np.float64) + 1j * raw[1::2].astype(np.float64)


def build_probe_frame(spec: ProbeSpec | None = None) -> ProbeFrame:
    """BPSK frame: bits map 0 -> +1, 1 -> -1, then one extra -1 symbol."""
    spec = spec or ProbeSpec()
    spec.validate()
    bits = gen_prbs(spec.prbs_order, spec.lfsr_polynomial, spec.lfsr_seed)
    symbols = np.append(1 - 2 * bits.astype(np.int8), np.int8(-1)).astype(np.int8)
    sps = spec.samples_per_symbol
    signal = np.repeat(symbols.astype(np.complex128), sps)
    samples = np.concatenate([signal, np.zeros(spec.zero_pad_samples, dtype=np.complex128)])
    return ProbeFrame(symbols, samples, spec.sample_rate, sps, spec)


def autocorrelate(seq) -> np.ndarray:
    """Aperiodic autocorrelation for lags ``-(N-1) .. N-1``."""
    seq = np.asarray(seq, dtype=np.int64)
    if seq.size == 0:
        raise ValueError("sequence must be nonempty")
    return np.correlate(seq, seq, mode="full")


def max_sidelobe(seq) -> int:
    acf = autocorrelate(seq)
    mid = acf.size // 2
    return int(np.max(np.abs(np.delete(acf, mid)))) if acf.size > 1 else 0
