"""Run configuration: nested JSON document, presets and validation.

The file mirrors the type hierarchy, one object per section::

    {"format_version": 1, "seed": 0, "mode": "fast", "shot_rate": 4000.0,
     "polarization": "single", "probe": {...}, "layout": {...},
     "scenario": {...}, "noise": {...}, "analysis": {...}}

Missing keys take their defaults; unknown keys are rejected. Saving writes
every field, so a saved file fully pins the run.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .channel import FAST, FULL, NoiseSpec
from .errors import ConfigError
from .fibermodel import (Acoustic, Airflow, FiberEvent, FiberLayout, HeatedSection,
                         RayleighCells, ScenarioProfile, Stage)
from .waveform import ProbeSpec

FORMAT_VERSION = 1


@dataclass(frozen=True)
class AnalysisParams:
    window_len: float = 0.1
    overlap: float = 0.0
    window: str = "hann"
    report_rate: float = 1.0
    t0_temp: float | None = None  # defaults to the first stage setpoint
    phase_temp_coeff: float | None = None  # defaults to the scenario value
    tau_min: float = 10.0
    tau_max: float = 300.0
    spectrum_times: tuple[float, ...] | None = None  # default: mid-point of every stage
    event_prominence_db: float = 20.0
    event_guard_bins: int = 10


@dataclass(frozen=True)
class RunConfig:
    probe: ProbeSpec = field(default_factory=ProbeSpec)
    layout: FiberLayout = field(default_factory=FiberLayout)
    scenario: ScenarioProfile = field(default_factory=ScenarioProfile)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    analysis: AnalysisParams = field(default_factory=AnalysisParams)
    mode: str = FAST
    shot_rate: float = 4000.0
    polarization: str = "single"
    seed: int = 0
    output_dir: str = "run"

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def validate(self) -> None:
        """Raise :class:`ConfigError` naming the first offending field."""
        checks = [("probe", self.probe.validate), ("layout", self.layout.validate),
                  ("scenario", self.scenario.validate), ("noise", self.noise.validate)]
        if not self.scenario.stages:
            raise ConfigError("scenario.stages", "must not be empty")
        for name, check in checks:
            try:
                check()
            except ValueError as exc:
                raise ConfigError(_field_path(name, getattr(self, name), str(exc)), str(exc)) from None
        if self.mode not in (FAST, FULL):
            raise ConfigError("mode", "must be 'fast' or 'full'")
        if not self.shot_rate > 0:
            raise ConfigError("shot_rate", "must be positive")
        if self.polarization not in ("single", "dual"):
            raise ConfigError("polarization", "must be 'single' or 'dual'")
        a = self.analysis
        if not a.window_len > 0:
            raise ConfigError("analysis.window_len", "must be positive")
        if not 0 <= a.overlap < 1:
            raise ConfigError("analysis.overlap", "must lie in [0, 1)")
        if not 0 < a.tau_min < a.tau_max:
            raise ConfigError("analysis.tau_min", "need 0 < tau_min < tau_max")

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        return {"format_version": FORMAT_VERSION, **{k: _jsonable(v) for k, v in d.items()}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    def sha256(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        d = dict(d)
        version = d.pop("format_version", FORMAT_VERSION)
        if version != FORMAT_VERSION:
            raise ConfigError("format_version", f"unsupported version {version}")
        kw = _fields(cls, d, "")
        sections = {
            "probe": lambda v, p: ProbeSpec(**_fields(ProbeSpec, v, p)),
            "layout": _layout,
            "scenario": _scenario,
            "noise": lambda v, p: NoiseSpec(**_fields(NoiseSpec, v, p, floats=("receiver_snr",))),
            "analysis": _analysis,
        }
        for name, build in sections.items():
            if name in kw:
                kw[name] = build(_section(kw[name], name), name)
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"not valid JSON: {exc}") from None
        return cls.from_dict(data)


def _field_path(section: str, obj, message: str) -> str:
    # Validation messages lead with the field they complain about.
    first = message.split()[0] if message else ""
    names = {f.name for f in dataclasses.fields(obj)}
    if first.split(".")[0] in names:
        return f"{section}.{first}"
    plural = first + "s"
    if plural in names:
        return f"{section}.{plural}"
    return section


def _jsonable(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _section(v, path: str) -> dict:
    if not isinstance(v, dict):
        raise ConfigError(path, "must be an object")
    return v


def _fields(cls, d: dict, path: str, floats: tuple[str, ...] = ()) -> dict:
    names = {f.name for f in dataclasses.fields(cls)}
    extra = set(d) - names
    if extra:
        key = sorted(extra)[0]
        raise ConfigError(f"{path}.{key}" if path else key, "unknown field")
    out = dict(d)
    for k in floats:
        if k in out and isinstance(out[k], str):
            try:
                out[k] = float(out[k])
            except ValueError:
                raise ConfigError(f"{path}.{k}", "must be a number") from None
    return out


def _layout(v: dict, path: str) -> FiberLayout:
    kw = _fields(FiberLayout, v, path)
    if "events" in kw:
        if not isinstance(kw["events"], list):
            raise ConfigError(f"{path}.events", "must be a list")
        kw["events"] = tuple(FiberEvent(**_fields(FiberEvent, _section(e, f"{path}.events[{i}]"),
                                                   f"{path}.events[{i}]"))
                             for i, e in enumerate(kw["events"]))
    if "rayleigh" in kw:
        p = f"{path}.rayleigh"
        kw["rayleigh"] = RayleighCells(**_fields(RayleighCells, _section(kw["rayleigh"], p), p,
                                                 floats=("mean_return_loss_db_per_cell",)))
    if "heated_section" in kw:
        p = f"{path}.heated_section"
        kw["heated_section"] = HeatedSection(**_fields(HeatedSection, _section(kw["heated_section"], p), p))
    return FiberLayout(**kw)


def _scenario(v: dict, path: str) -> ScenarioProfile:
    kw = _fields(ScenarioProfile, v, path)
    if "stages" in kw:
        if not isinstance(kw["stages"], list) or not kw["stages"]:
            raise ConfigError(f"{path}.stages", "must be a nonempty list")
        kw["stages"] = tuple(Stage(**_fields(Stage, _section(s, f"{path}.stages[{i}]"),
                                             f"{path}.stages[{i}]"))
                             for i, s in enumerate(kw["stages"]))
    else:
        raise ConfigError(f"{path}.stages", "missing")
    if "acoustic" in kw:
        kw["acoustic"] = Acoustic(**_fields(Acoustic, _section(kw["acoustic"], f"{path}.acoustic"),
                                            f"{path}.acoustic"))
    if "airflow" in kw:
        kw["airflow"] = Airflow(**_fields(Airflow, _section(kw["airflow"], f"{path}.airflow"),
                                          f"{path}.airflow"))
    return ScenarioProfile(**kw)


def _analysis(v: dict, path: str) -> AnalysisParams:
    kw = _fields(AnalysisParams, v, path)
    if kw.get("spectrum_times") is not None:
        kw["spectrum_times"] = tuple(float(x) for x in kw["spectrum_times"])
    return AnalysisParams(**kw)


DEFAULT_STAGES = (Stage(27.0, 30.0, False), Stage(27.0, 30.0, True),
                Stage(194.0, 40.0, True), Stage(152.0, 30.0, True))
CALIBRATION_STAGES = (Stage(27.0, 30.0, False), Stage(27.0, 30.0, True), Stage(346.0, 40.0, True))
TONE_ONLY_STAGES = (Stage(10.0, 30.0, False),)


def preset(name: str) -> RunConfig:
    """Shipped scenarios: ``paper-default``, ``calibration`` and ``tone-only``."""
    stages = {"paper-default": DEFAULT_STAGES, "calibration": CALIBRATION_STAGES,
              "tone-only": TONE_ONLY_STAGES}
    if name not in stages:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(stages)}")
    return RunConfig(scenario=ScenarioProfile(stages=stages[name]), output_dir=name)


PRESETS = ("paper-default", "calibration", "tone-only")
