"""Batch orchestration: ``ccotdr {simulate,fingerprint,analyze,calibrate,reproduce}``.

Settings resolve as command-line flag, then environment variable
(``CCOTDR_SEED``, ``CCOTDR_MODE``, ``CCOTDR_THREADS``, ``CCOTDR_OUT``), then
the config file. Exit codes: 0 success, 1 invalid configuration or usage,
2 runtime failure (including missing inputs), 3 acceptance check failed
(``reproduce`` only).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analysis import (PhaseSeries, calibrate, decimate_mean, detrended_spectrum, extract_phase_series,
                       fit_line, fit_time_constant, mean_spectrum, phase_to_temperature,
                       tone_peak_to_peak, window_slope)
from .channel import (FAST, FULL, STREAM_SHOTS, build_impulse_response, read_shot_archive,
                      simulate_run, simulate_shot, stream, write_shot_archive)
from .config import PRESETS, RunConfig, preset
from .correlator import correlate_shot, detect_events, events_to_csv, return_loss_trace
from .errors import CalibrationUnavailable, ConfigError
from .fibermodel import GroundTruth
from .waveform import build_probe_frame

ENV_PREFIX = "CCOTDR_"

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_ACCEPTANCE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, config: RunConfig, command: str) -> Path:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "command": command,
        "config_sha256": config.sha256(),
        "seed": config.seed,
        "versions": {"ccotdr": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "files": {str(p.relative_to(out)): _sha256(p) for p in files},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _csv(path: Path, header: str, columns, fmt: str = "%.10g") -> None:
    data = np.column_stack(columns) if len(columns[0]) else np.zeros((0, len(columns)))
    np.savetxt(path, data, delimiter=",", fmt=fmt, header=header, comments="")


def _read_csv(path: Path) -> dict[str, np.ndarray]:
    if not Path(path).is_file():
        raise FileNotFoundError(f"missing input file {path}")
    with open(path) as fh:
        names = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {n: data[:, i] for i, n in enumerate(names)}


# -- commands -----------------------------------------------------------------

def cmd_simulate(config: RunConfig, out: Path, threads: int = 1, export_phasors: bool = False):
    """Shot archive, ground truth and the resolved config."""
    out.mkdir(parents=True, exist_ok=True)
    run = simulate_run(config, threads=threads)
    config.save(out / "config.json")
    write_shot_archive(run, out / "shots.bin")
    run.truth.to_csv(out / "ground_truth.csv")
    if export_phasors and run.mode == FAST:
        run.to_phasor_csv(out / "phasors.csv")
    write_manifest(out, config, "simulate")
    return run


def cmd_fingerprint(config: RunConfig, out: Path):
    """One full-mode shot at rest: return-loss trace and detected events."""
    out.mkdir(parents=True, exist_ok=True)
    frame = build_probe_frame(config.probe)
    ir = build_impulse_response(config.layout, config.probe.sample_rate, seed=config.seed,
                                polarization=config.polarization)
    seed = config.seed if config.noise.rng_seed is None else config.noise.rng_seed
    shot = simulate_shot(frame, ir, 0.0, config.noise, 0.0, stream(seed, STREAM_SHOTS, 0))
    rx = shot.rx_samples[0] if ir.n_pol == 1 else shot.rx_samples
    refl = correlate_shot(rx, frame.reference, distance_step=ir.distance_step)
    trace = return_loss_trace(refl)
    a = config.analysis
    events = detect_events(trace, a.event_prominence_db, a.event_guard_bins)
    config.save(out / "config.json")
    trace.to_csv(out / "trace.csv")
    events_to_csv(events, out / "events.csv")
    write_manifest(out, config, "fingerprint")
    return trace, events


@dataclass
class AnalysisResult:
    series: PhaseSeries
    reports: list
    temperature: object
    coefficient: float


def _phase_from_archive(config: RunConfig, archive: Path) -> PhaseSeries:
    if not archive.is_file():
        raise FileNotFoundError(f"missing shot archive {archive}")
    run = read_shot_archive(archive)
    if run.mode == FAST:
        return extract_phase_series(run, 0, 1)
    frame = build_probe_frame(config.probe)
    dz = config.layout.distance_step(config.probe.sample_rate)
    return extract_phase_series(run, *run.event_taps, frame=frame, distance_step=dz)


def analyze_series(config: RunConfig, series: PhaseSeries, out: Path | None,
                   coefficient: float | None = None) -> AnalysisResult:
    a = config.analysis
    coeff = coefficient or a.phase_temp_coeff or config.scenario.phase_temp_coeff
    t0 = a.t0_temp if a.t0_temp is not None else config.scenario.initial_temperature
    reports = window_slope(series, a.window_len, a.overlap)
    temp = phase_to_temperature(series, coeff, t0, a.report_rate)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _csv(out / "phase.csv", "t_s,dphi_rad", [series.t, series.dphi_unwrapped])
        _csv(out / "windows.csv", "t_start_s,slope_rad_per_s,stderr",
             [[r.window_start for r in reports], [r.slope for r in reports],
              [r.slope_stderr for r in reports]])
        times = a.spectrum_times
        if times is None:
            edges = np.cumsum([0.0] + [s.duration for s in config.scenario.stages])
            times = tuple(0.5 * (edges[:-1] + edges[1:]))
        size = int(round(a.window_len * series.sample_rate))
        for ts in times:
            i0 = int(np.searchsorted(series.t, ts))
            i0 = min(i0, series.t.size - size)
            if i0 < 0:
                continue
            sp = detrended_spectrum(series.dphi_unwrapped[i0:i0 + size], series.t[i0:i0 + size], a.window)
            _csv(out / f"spectrum_{ts:.3f}.csv", "freq_hz,mag_rad", [sp.freq, sp.magnitude])
        _csv(out / "temperature.csv", "t_s,temp_C", [temp.t, temp.temp])
    return AnalysisResult(series, reports, temp, coeff)


def cmd_analyze(config: RunConfig, archive: Path, out: Path, calibration: Path | None = None):
    coeff = None
    if calibration is not None:
        if not calibration.is_file():
            raise FileNotFoundError(f"missing calibration report {calibration}")
        coeff = json.loads(calibration.read_text())["coefficient"]
    series = _phase_from_archive(config, archive)
    result = analyze_series(config, series, out, coeff)
    write_manifest(out, config, "analyze")
    return result


def calibrate_arrays(config: RunConfig, t, phase, t_ref, temp_ref):
    a = config.analysis
    tb, ph = decimate_mean(t, phase, a.report_rate)
    tr, ref = decimate_mean(t_ref, temp_ref, a.report_rate)
    n = min(tb.size, tr.size)
    return calibrate(ph[:n], ref[:n], 1.0 / a.report_rate, (a.tau_min, a.tau_max))


def cmd_calibrate(config: RunConfig, phase_csv: Path, reference_csv: Path, out: Path):
    phase = _read_csv(phase_csv)
    ref = _read_csv(reference_csv)
    col = "chamber_C" if "chamber_C" in ref else "temp_C"
    if col not in ref or "t_s" not in ref:
        raise ValueError(f"{reference_csv} needs columns t_s and chamber_C or temp_C")
    cal = calibrate_arrays(config, phase["t_s"], phase["dphi_rad"], ref["t_s"], ref[col])
    out.mkdir(parents=True, exist_ok=True)
    report = {"coefficient": cal.coefficient, "tau": cal.tau, "sse": cal.sse}
    (out / "calibration.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    write_manifest(out, config, "calibrate")
    return report


# Thresholds checked by ``reproduce``.
TONE_PP = (0.25, 0.01)
TONE_MARGIN_DB = 20.0
RATE_TOL = 0.0005
TAU = (73.0, 3.0)
PEAK = (37.5, 0.5)
COEFF_REL = 0.02


def _tone_checks(config: RunConfig, series: PhaseSeries, t_stop: float) -> dict:
    ac = config.scenario.acoustic
    sel = series.t < t_stop
    pp = tone_peak_to_peak(series.t[sel], series.dphi_unwrapped[sel], ac.frequency)
    sp = mean_spectrum(series, config.analysis.window_len, 0.0, t_stop, config.analysis.window)
    k = 1 + int(np.argmax(sp.magnitude[1:]))
    margin = 20 * np.log10(sp.magnitude[k] / np.median(sp.magnitude[1:]))
    return {
        "tone_pp_rad": {"value": pp, "pass": abs(pp - TONE_PP[0]) <= TONE_PP[1]},
        "tone_bin_hz": {"value": float(sp.freq[k]), "pass": abs(sp.freq[k] - ac.frequency) < 1e-6},
        "tone_margin_db": {"value": float(margin), "pass": margin >= TONE_MARGIN_DB},
    }


def cmd_reproduce(name: str, out: Path, threads: int = 1, seed: int | None = None) -> tuple[dict, bool]:
    """Run a shipped preset end to end and check it against the thresholds."""
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    out.mkdir(parents=True, exist_ok=True)
    cfg = preset(name)
    if seed is not None:
        cfg = cfg.replace(seed=seed)
    checks: dict = {}
    if name == "tone-only":
        run = cmd_simulate(cfg, out / "simulate", threads)
        series = extract_phase_series(run)
        analyze_series(cfg, series, out / "analyze")
        checks.update(_tone_checks(cfg, series, cfg.scenario.duration))
    else:
        cal_cfg = preset("calibration").replace(seed=cfg.seed)
        cal_run = cmd_simulate(cal_cfg, out / "calibration" / "simulate", threads)
        cal_series = extract_phase_series(cal_run)
        analyze_series(cal_cfg, cal_series, out / "calibration" / "analyze")
        cal = cmd_calibrate(cal_cfg, out / "calibration" / "analyze" / "phase.csv",
                            out / "calibration" / "simulate" / "ground_truth.csv", out / "calibration")
        true_coeff = cal_cfg.scenario.phase_temp_coeff
        checks["coefficient"] = {"value": cal["coefficient"],
                                 "pass": abs(cal["coefficient"] / true_coeff - 1) <= COEFF_REL}
        if name == "calibration":
            checks["tau_s"] = {"value": cal["tau"], "pass": abs(cal["tau"] - TAU[0]) <= TAU[1]}
        else:
            run = cmd_simulate(cfg, out / "simulate", threads)
            series = extract_phase_series(run)
            res = analyze_series(cfg, series, out / "analyze", cal["coefficient"])
            truth = run.truth
            fan_off_end = cfg.scenario.stages[0].duration
            checks.update(_tone_checks(cfg, series, fan_off_end))
            rates = np.array([r.slope for r in res.reports]) / res.coefficient
            true_rates = _window_truth_rates(truth, res.reports)
            err = float(np.max(np.abs(rates - true_rates)))
            near = int(np.argmin(np.abs(true_rates - 0.05)))
            checks["rate_error_k_per_s"] = {"value": err, "pass": err <= RATE_TOL}
            checks["rate_near_0.05_k_per_s"] = {"value": float(rates[near]),
                                                 "truth": float(true_rates[near]),
                                                 "pass": abs(rates[near] - true_rates[near]) <= RATE_TOL}
            a = cfg.analysis
            tr, ref = decimate_mean(truth.t, truth.chamber_temp, a.report_rate)
            meas = res.temperature.temp[:tr.size]
            fit = fit_time_constant(ref[:meas.size], meas, 1.0 / a.report_rate, (a.tau_min, a.tau_max),
                                    initial=ref[0])
            peak = float(np.max(res.temperature.temp))
            checks["tau_s"] = {"value": fit.tau, "pass": abs(fit.tau - TAU[0]) <= TAU[1]}
            checks["peak_temp_C"] = {"value": peak, "pass": abs(peak - PEAK[0]) <= PEAK[1]}
            (out / "calibration_default.json").write_text(
                json.dumps({"coefficient": res.coefficient, "tau": fit.tau, "sse": fit.sse},
                           indent=2, sort_keys=True) + "\n")
    checks = {k: {**c, "value": float(c["value"]), "pass": bool(c["pass"])} for k, c in checks.items()}
    ok = all(c["pass"] for c in checks.values())
    summary = {"preset": name, "seed": cfg.seed, "pass": ok, "checks": checks}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_manifest(out, cfg, f"reproduce {name}")
    return summary, ok


def _window_truth_rates(truth: GroundTruth, reports) -> np.ndarray:
    """Least-squares rate of the true core temperature over each report window."""
    out = []
    for r in reports:
        a = int(np.searchsorted(truth.t, r.window_start))
        tw = truth.t[a:a + r.n_samples]
        out.append(fit_line(tw - tw[0], truth.core_temp[a:a + r.n_samples])[0])
    return np.array(out)


# -- entry point --------------------------------------------------------------

def _env(name: str):
    return os.environ.get(ENV_PREFIX + name)


def _resolve(args) -> RunConfig:
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"missing config file {path}")
        cfg = RunConfig.load(path)
    elif getattr(args, "preset", None):
        cfg = preset(args.preset)
    else:
        cfg = preset("paper-default")
    seed = args.seed if args.seed is not None else _env("SEED")
    mode = args.mode or _env("MODE")
    kw = {}
    if seed is not None:
        kw["seed"] = int(seed)
    if mode is not None:
        kw["mode"] = mode
    cfg = cfg.replace(**kw) if kw else cfg
    cfg.validate()
    return cfg


def _threads(args) -> int:
    v = args.threads if args.threads is not None else _env("THREADS")
    return int(v) if v is not None else (os.cpu_count() or 1)


def _out(args, cfg: RunConfig | None, default: str) -> Path:
    v = args.out or _env("OUT") or (cfg.output_dir if cfg else default)
    return Path(v)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration (JSON)")
    common.add_argument("--preset", choices=PRESETS, help="use a shipped configuration")
    common.add_argument("--seed", type=int, help="master RNG seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--mode", choices=(FAST, FULL), help="simulation fidelity")
    common.add_argument("--threads", type=int, help="worker threads (default: all cores)")

    p = _Parser(prog="ccotdr", description="Coherent correlation OTDR digital twin")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("simulate", parents=[common], help="simulate shots and ground truth")
    s.add_argument("--export-phasors", action="store_true", help="also write phasors.csv (fast mode)")
    sub.add_parser("fingerprint", parents=[common], help="return-loss trace and events")
    s = sub.add_parser("analyze", parents=[common], help="phase, windows, spectra, temperature")
    s.add_argument("--input", required=True, help="shot archive or simulate output directory")
    s.add_argument("--calibration", help="calibration.json supplying the coefficient")
    s = sub.add_parser("calibrate", parents=[common], help="fit coefficient and thermal lag")
    s.add_argument("--input", required=True, help="phase.csv or analyze output directory")
    s.add_argument("--reference", required=True, help="reference temperature CSV")
    s = sub.add_parser("reproduce", parents=[common], help="end-to-end preset with pass/fail summary")
    s.add_argument("name", choices=PRESETS, nargs="?", default="paper-default")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "reproduce":
            seed = args.seed if args.seed is not None else _env("SEED")
            out = _out(args, None, args.name)
            summary, ok = cmd_reproduce(args.name, out, _threads(args),
                                        None if seed is None else int(seed))
            for key, c in summary["checks"].items():
                print(f"{'PASS' if c['pass'] else 'FAIL'}  {key} = {c['value']:.6g}")
            return EXIT_OK if ok else EXIT_ACCEPTANCE
        cfg = _resolve(args)
        out = _out(args, cfg, "run")
        if args.command == "simulate":
            cmd_simulate(cfg, out, _threads(args), args.export_phasors)
        elif args.command == "fingerprint":
            _, events = cmd_fingerprint(cfg, out)
            for e in events:
                print(f"event at {e.distance_m:8.2f} m  {e.peak_magnitude_db:7.2f} dB")
        elif args.command == "analyze":
            src = Path(args.input)
            archive = src / "shots.bin" if src.is_dir() else src
            cmd_analyze(cfg, archive, out, Path(args.calibration) if args.calibration else None)
        elif args.command == "calibrate":
            src = Path(args.input)
            phase_csv = src / "phase.csv" if src.is_dir() else src
            report = cmd_calibrate(cfg, phase_csv, Path(args.reference), out)
            print(json.dumps(report, sort_keys=True))
    except ConfigError as exc:
        print(f"ccotdr: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, CalibrationUnavailable, ValueError, OSError) as exc:
        print(f"ccotdr: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
