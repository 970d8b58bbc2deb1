import numpy as np
import pytest
from scipy import stats

from ccotdr.channel import (FAST, FULL, NoiseSpec, ShotRecord, build_impulse_response,
                            read_shot_archive, residual_phase_std, shot_times, simulate_run,
                            simulate_shot, write_shot_archive)
from ccotdr.config import RunConfig
from ccotdr.correlator import correlate_shot
from ccotdr.fibermodel import (Acoustic, Airflow, FiberEvent, FiberLayout, GroundTruth,
                               RayleighCells, ScenarioProfile, Stage)
from ccotdr.waveform import ProbeSpec, build_probe_frame

NOISELESS = NoiseSpec(laser_linewidth=0.0, receiver_snr=np.inf)


def quiet_config(duration=1.0, **kw):
    scen = ScenarioProfile(stages=(Stage(duration, 30.0),), acoustic=Acoustic(enabled=False),
                           airflow=Airflow(enabled=False))
    base = dict(scenario=scen)
    base.update(kw)
    return RunConfig(**base)


def test_event_taps_and_weights():
    ir = build_impulse_response(FiberLayout(), 5e8, seed=0)
    assert ir.event_indices == (195, 1170, 1250)
    assert ir.n_taps == 1251
    assert ir.distance_step == pytest.approx(0.19986, abs=1e-5)
    assert ir.weights[195] == 0.0 and ir.weights[1170] == 1.0
    assert 0 < ir.weights[600] < 1


def test_speckle_seeded_and_distinct():
    a = build_impulse_response(FiberLayout(), seed=1)
    b = build_impulse_response(FiberLayout(), seed=1)
    c = build_impulse_response(FiberLayout(), seed=2)
    assert a.taps.tobytes() == b.taps.tobytes()
    assert not np.array_equal(a.taps, c.taps)
    assert a.event_amplitudes == c.event_amplitudes


def test_cells_below_resolution_rejected():
    layout = FiberLayout(rayleigh=RayleighCells(cell_length=0.1))
    with pytest.raises(ValueError, match="cell_length"):
        build_impulse_response(layout)


def test_fast_mode_wiener_variance():
    cfg = quiet_config(5.0, noise=NoiseSpec(100.0, np.inf))
    run = simulate_run(cfg)
    assert len(run) == 20000
    d = np.angle(run.phasors[:, 1] * np.conj(run.phasors[:, 0]))
    expected = residual_phase_std(100.0, 1.95e-6)
    assert expected == pytest.approx(0.035, abs=5e-4)
    assert d.std() == pytest.approx(expected, rel=0.1)


def sidelobe_oracle(frame, taps, k):
    """Bin k of the normalised correlation from the code autocorrelation."""
    ref = frame.reference
    acf = np.correlate(ref, ref, mode="full") / np.sum(np.abs(ref) ** 2)
    mid = ref.size - 1
    j = np.flatnonzero(taps)
    return np.sum(taps[j] * np.conj(acf[mid + (k - j)]))


def test_noiseless_full_mode_phase_matches_oracle():
    frame = build_probe_frame()
    layout = FiberLayout(events=(FiberEvent(39.0), FiberEvent(234.0)), rayleigh=RayleighCells(enabled=False))
    ir = build_impulse_response(layout)
    phases = []
    for dphi in (0.0, 0.0, np.pi / 2):
        rx = simulate_shot(frame, ir, dphi, NOISELESS).rx_samples
        refl = correlate_shot(rx[0], frame.reference, distance_step=ir.distance_step)
        taps = ir.rotated(dphi)[0]
        for k in (195, 1170):
            assert refl.bins[k] == pytest.approx(sidelobe_oracle(frame, taps, k), abs=1e-12)
        phases.append(np.angle(refl.bins[1170] * np.conj(refl.bins[195])))
    assert phases[0] == phases[1] == pytest.approx(0.0, abs=1e-12)
    # Code sidelobe at 195 chips (R = 9) couples the two connectors by 9/512.
    assert phases[2] == pytest.approx(np.pi / 2 - 2 * np.arctan(9 / 512), abs=1e-3)


def test_shot_counts_and_full_rate_limit():
    assert shot_times(400, 4000).size == 1_600_000
    probe = ProbeSpec(zero_pad_samples=1250)
    assert build_probe_frame(probe).frame_period == pytest.approx(7.62e-6)
    cfg = quiet_config(1e-4, probe=probe, mode=FULL, shot_rate=131.2e3, noise=NOISELESS)
    assert len(simulate_run(cfg)) == 13
    with pytest.raises(ValueError, match="shot_rate"):
        simulate_run(cfg.replace(shot_rate=132e3))


def test_empty_truth_gives_empty_run():
    empty = GroundTruth(*(np.zeros(0) for _ in range(4)))
    for mode in (FAST, FULL):
        run = simulate_run(quiet_config(mode=mode), truth=empty)
        assert len(run) == 0
        assert list(run) == []


def test_rayleigh_magnitudes_follow_rayleigh_law():
    layout = FiberLayout(events=(FiberEvent(39.0), FiberEvent(234.0)))
    ir = build_impulse_response(layout, seed=4)
    scale = np.sqrt(1e-8 / 2)
    taps = np.abs(np.delete(ir.taps[0], [0, 195, 1170]))
    taps = taps[taps > 0]
    assert stats.kstest(taps, stats.rayleigh(scale=scale).cdf).pvalue > 0.01
    # Bins after correlation, sampled away from connectors and code sidelobes.
    frame = build_probe_frame()
    bare = build_impulse_response(FiberLayout(events=(FiberEvent(0.0, return_loss=-120.0),
                                                      FiberEvent(1.0, return_loss=-120.0))), seed=4)
    rx = simulate_shot(frame, bare, 0.0, NOISELESS).rx_samples[0]
    bins = np.abs(correlate_shot(rx, frame.reference, distance_step=bare.distance_step).bins)
    sample = bins[20:1240:7]
    spread = stats.rayleigh.fit(sample, floc=0)[1]
    assert stats.kstest(sample, stats.rayleigh(scale=spread).cdf).pvalue > 0.01


def test_return_loss_change_scales_amplitude():
    frame = build_probe_frame()
    peaks = []
    for rl in (-45.0, -51.0):
        layout = FiberLayout(events=(FiberEvent(39.0, return_loss=rl),),
                             rayleigh=RayleighCells(enabled=False))
        ir = build_impulse_response(layout)
        rx = simulate_shot(frame, ir, 0.0, NOISELESS).rx_samples[0]
        peaks.append(abs(correlate_shot(rx, frame.reference, distance_step=ir.distance_step).bins[195]))
    assert peaks[1] / peaks[0] == pytest.approx(0.5, rel=0.01)


@pytest.mark.parametrize("mode", [FAST, FULL])
def test_archive_round_trip(tmp_path, mode):
    cfg = quiet_config(2e-3 if mode == FULL else 1.0, mode=mode)
    run = simulate_run(cfg)
    write_shot_archive(run, tmp_path / "shots.bin")
    back = read_shot_archive(tmp_path / "shots.bin")
    assert back.mode == mode and len(back) == len(run)
    assert back.event_taps == run.event_taps
    np.testing.assert_array_equal(back.t, run.t)
    np.testing.assert_allclose(back.data, run.data.astype(np.complex64), rtol=0, atol=1e-7)


def test_bad_archive(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        read_shot_archive(tmp_path / "x.bin")


def test_thread_count_determinism():
    fast = quiet_config(40.0, scenario=ScenarioProfile(stages=(Stage(40.0, 30.0, True),)))
    a = simulate_run(fast, threads=1)
    b = simulate_run(fast, threads=4)
    assert len(a) > 2 * 65536
    assert a.data.tobytes() == b.data.tobytes()
    full = quiet_config(1e-3, mode=FULL, shot_rate=8000)
    assert simulate_run(full, threads=1).data.tobytes() == simulate_run(full, threads=3).data.tobytes()


def test_dual_polarization_run():
    cfg = quiet_config(1e-3, mode=FULL, polarization="dual", noise=NOISELESS)
    run = simulate_run(cfg)
    assert run.data.shape[1] == 2
    ir = build_impulse_response(cfg.layout, seed=cfg.seed, polarization="dual")
    np.testing.assert_allclose(np.sum(np.abs(ir.taps) ** 2, axis=0),
                               np.abs(build_impulse_response(cfg.layout, seed=cfg.seed).taps[0]) ** 2)
    with pytest.raises(ValueError):
        build_impulse_response(cfg.layout, polarization="circular")


def test_shot_record_payload_checks():
    with pytest.raises(ValueError):
        ShotRecord(0.0, FAST, rx_samples=np.zeros(3))
    with pytest.raises(ValueError):
        ShotRecord(0.0, "slow", reflector_phasors=np.zeros(2))
