"""Run configuration: one JSON document that pins every knob of a study."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .charge_model import WORST_PATTERN, ElectricalParams
from .perf_model import PerfKnobs
from .variation import VariationSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProfilingTemplate:
    temps: tuple[float, ...] = (55.0, 85.0)
    pattern: float = WORST_PATTERN
    t_refw: float = 64.0
    mode: str = "per_parameter"
    resolution: float = 0.05
    refresh_intervals: tuple[float, ...] = (64.0, 32.0, 16.0)
    n_dimms: int = 100
    trial_noise_sigma: float = 0.35
    repeat_iterations: int = 10

    def __post_init__(self):
        if self.mode not in ("per_parameter", "joint"):
            raise ConfigError(f"profiling.mode: unknown mode {self.mode!r}")
        if not self.resolution > 0:
            raise ConfigError("profiling.resolution: must be > 0")
        if self.pattern < 1:
            raise ConfigError("profiling.pattern: must be >= 1")
        if self.n_dimms < 1:
            raise ConfigError("profiling.n_dimms: must be >= 1")
        if self.trial_noise_sigma < 0:
            raise ConfigError("profiling.trial_noise_sigma: must be >= 0")


@dataclass(frozen=True)
class ControllerConfig:
    guardband_temp: float = 5.0
    guardband_timing_fraction: float = 0.02
    sample_interval_s: float = 1.0
    slew_cap: float = 0.1

    def __post_init__(self):
        if self.guardband_temp < 0 or self.guardband_timing_fraction < 0:
            raise ConfigError("controller: guardbands must be >= 0")
        if not self.sample_interval_s > 0 or not self.slew_cap > 0:
            raise ConfigError("controller: sample_interval_s and slew_cap must be > 0")


_SECTIONS = {
    "electrical": ElectricalParams,
    "variation": VariationSpec,
    "profiling": ProfilingTemplate,
    "controller": ControllerConfig,
    "perf": PerfKnobs,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int
    electrical: ElectricalParams = field(default_factory=ElectricalParams)
    variation: VariationSpec = field(default_factory=VariationSpec)
    profiling: ProfilingTemplate = field(default_factory=ProfilingTemplate)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    perf: PerfKnobs = field(default_factory=PerfKnobs)
    output_dir: str = "out"

    def __post_init__(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed: must be an integer in [0, 2**64)")

    def to_dict(self) -> dict:
        d = {"seed": self.seed, "output_dir": self.output_dir}
        for name in _SECTIONS:
            d[name] = asdict(getattr(self, name))
        d["profiling"]["temps"] = list(self.profiling.temps)
        d["profiling"]["refresh_intervals"] = list(self.profiling.refresh_intervals)
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("top level: expected a JSON object")
        known = set(_SECTIONS) | {"seed", "output_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"top level: unknown keys {sorted(unknown)}")
        if "seed" not in d:
            raise ConfigError("seed: missing (a seed is mandatory)")
        kw = {"seed": d["seed"], "output_dir": str(d.get("output_dir", "out"))}
        for name, typ in _SECTIONS.items():
            sec = d.get(name, {})
            if not isinstance(sec, dict):
                raise ConfigError(f"{name}: expected an object")
            names = {f.name: f for f in fields(typ)}
            bad = set(sec) - set(names)
            if bad:
                raise ConfigError(f"{name}: unknown fields {sorted(bad)}")
            try:
                kw[name] = _build(typ, sec)
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{name}: {exc}") from exc
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(doc)


def _build(typ, sec: dict):
    if hasattr(typ, "from_dict") and typ is not ProfilingTemplate:
        return typ.from_dict(sec)
    sec = dict(sec)
    for key in ("temps", "refresh_intervals"):
        if key in sec:
            sec[key] = tuple(float(x) for x in sec[key])
    return typ(**sec)
