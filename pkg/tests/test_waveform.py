import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccotdr.waveform import (PRIMITIVE_POLYNOMIALS, ProbeSpec, autocorrelate, build_probe_frame,
                             gen_prbs, is_primitive, load_frame_samples, lfsr_period, max_sidelobe)


def lfsr_oracle(order, polynomial, seed):
    """Plain-list recurrence a[t+n] = sum(p_i a[t+i]) mod 2, seeded LSB-first."""
    coeffs = [(polynomial >> i) & 1 for i in range(order)]
    a = [(seed >> i) & 1 for i in range(order)]
    while len(a) < (1 << order) - 1:
        t = len(a) - order
        a.append(sum(c * a[t + i] for i, c in enumerate(coeffs)) % 2)
    return np.array(a[: (1 << order) - 1], dtype=np.uint8)


def test_prbs9_balance_matches_oracle():
    bits = gen_prbs(9, 0x221, 0x1FF)
    oracle = lfsr_oracle(9, 0x221, 0x1FF)
    assert bits.size == 511
    np.testing.assert_array_equal(bits, oracle)
    assert int(oracle.sum()) == 256
    assert int((oracle == 0).sum()) == 255


def test_order3_visits_all_states():
    order, poly, seed = 3, 0b1101, 0b111
    bits = gen_prbs(order, poly, seed)
    assert bits.size == 7
    states = set()
    state = seed
    for _ in range(7):
        states.add(state)
        fb = bin(state & 0b101).count("1") & 1
        state = (state >> 1) | (fb << 2)
    assert state == seed
    assert states == set(range(1, 8))


@pytest.mark.parametrize("seed", [0x001, 0x0A5, 0x123, 0x1FE])
def test_other_seeds_are_cyclic_shifts(seed):
    ref = 1 - 2 * gen_prbs(9, 0x221, 0x1FF).astype(int)
    other = 1 - 2 * gen_prbs(9, 0x221, seed).astype(int)
    circ = np.array([ref @ np.roll(other, k) for k in range(511)])
    assert circ.max() == 511
    assert (circ == 511).sum() == 1
    assert set(np.unique(circ[circ != 511])) == {-1}


@pytest.mark.parametrize("order,poly", [(o, p) for o, ps in PRIMITIVE_POLYNOMIALS.items() for p in ps])
def test_table_polynomials_have_full_period(order, poly):
    assert lfsr_period(order, poly) == (1 << order) - 1


def test_invalid_arguments():
    with pytest.raises(ValueError):
        gen_prbs(9, 0x221, 0)
    with pytest.raises(ValueError):
        gen_prbs(9, 0x201, 0x1FF)  # x^9 + 1 is reducible
    assert not is_primitive(9, 0x203)


def test_default_frame_layout():
    frame = build_probe_frame()
    assert frame.symbols.size == 512
    assert frame.n_signal == 2560
    assert frame.samples_per_symbol == 5
    assert frame.symbols[-1] == -1
    # 256 ones -> -1, 255 zeros -> +1, plus the appended -1.
    assert int(frame.symbols.sum()) == -2
    sig = frame.samples[:2560]
    pad = frame.samples[2560:]
    assert np.all(np.abs(sig) == 1)
    assert np.all(pad == 0)
    assert np.sum(np.abs(frame.samples) ** 2) == 512 * 5


def test_frame_period_with_1250_pad():
    frame = build_probe_frame(ProbeSpec(zero_pad_samples=1250))
    assert frame.samples.size == 3810
    assert frame.frame_period == pytest.approx(7.62e-6, rel=1e-12)


def test_frame_deterministic_and_export(tmp_path):
    a = build_probe_frame()
    b = build_probe_frame()
    assert a.samples.tobytes() == b.samples.tobytes()
    a.export(tmp_path / "frame.bin")
    raw = (tmp_path / "frame.bin").read_bytes()
    assert len(raw) == a.samples.size * 8
    np.testing.assert_array_equal(load_frame_samples(tmp_path / "frame.bin"), a.samples)


def test_spec_validation():
    with pytest.raises(ValueError):
        build_probe_frame(ProbeSpec(sample_rate=4.5e8))
    with pytest.raises(ValueError):
        build_probe_frame(ProbeSpec(lfsr_seed=0))


def test_autocorrelation_triangle():
    np.testing.assert_array_equal(autocorrelate([1, 1, 1, 1]), [1, 2, 3, 4, 3, 2, 1])


def test_probe_autocorrelation_golden_sidelobe():
    sym = build_probe_frame().symbols.astype(int)
    acf = autocorrelate(sym)
    assert acf[acf.size // 2] == 512
    # Brute-force lag loop as the oracle for the frozen value.
    n = sym.size
    brute = max(abs(sum(int(sym[i]) * int(sym[i + k]) for i in range(n - k))) for k in range(1, n))
    assert brute == 24
    assert max_sidelobe(sym) == brute


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from([-1, 1]), min_size=1, max_size=64))
def test_autocorrelation_properties(seq):
    acf = autocorrelate(seq)
    assert acf[len(seq) - 1] == len(seq)
    np.testing.assert_array_equal(acf, acf[::-1])
