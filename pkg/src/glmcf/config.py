"""Experiment configuration: TOML file with sections, overridable by ``--set``."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .flow import FlowConfig
from .geometry import MetricSpec, PeriodicGrid
from .monitors import HarnackConfig
from .trig import TrigPoly

SCENARIOS = ("bootstrap", "stability", "uniqueness", "lemma_check", "harnack", "convergence")


@dataclass
class RunSection:
    scenario: str = "convergence"
    output_dir: str = "out"
    seed: int = 0


@dataclass
class GridSection:
    n: int = 2
    N: int = 32


@dataclass
class MetricSection:
    family: str = "flat"
    f: str = ""  # conformal factor, g = exp(2f) I
    d: list = field(default_factory=list)  # diagonal entries


@dataclass
class InitialSection:
    harmonic: list = field(default_factory=list)  # c_i; empty means zeros
    potential: str = "0.05*sin(q1)*sin(q2)"  # u_0
    potential_b: str = ""  # second initial potential (uniqueness)
    harmonic_b: list = field(default_factory=list)  # class of the second run; empty = same class


@dataclass
class FlowSection:
    cfl: float = 0.2
    t_max: float = 10.0
    osc_tol: float = 1e-10
    sample_every: int = 0
    checkpoint_every: int = 0
    samples_per_unit: int = 10


@dataclass
class BootstrapSection:
    osc_tol: float = 1e-10
    t_max: float = 40.0


@dataclass
class MonitorSection:
    K1: float = 1.0
    K2: float = 1.0
    full: bool = True


@dataclass
class StabilitySection:
    shape: str = "sin(q1)*sin(q2)"  # perturbation profile, scaled by the ladder amplitude
    amplitude_start: float = 0.0125
    rungs: int = 4
    factor: float = 2.0
    include_zero: bool = True


@dataclass
class LemmaSection:
    t_star: float = 0.02  # centre of the residual window
    base_potential: str = ""  # phi_hat of chi_hat = c.dq + d(phi_hat); need not be special Lagrangian
    refine: bool = True  # also run at 2N with dt / 4


@dataclass
class HarnackSection:
    alpha: float = 1.5
    t1: float = 0.5
    t2: float = 1.0
    v0: str = "1 + 0.5*cos(q1)"


@dataclass
class FitSection:
    t_a: float = 1.0
    t_b: float = 10.0


@dataclass
class ExperimentConfig:
    run: RunSection = field(default_factory=RunSection)
    grid: GridSection = field(default_factory=GridSection)
    metric: MetricSection = field(default_factory=MetricSection)
    initial: InitialSection = field(default_factory=InitialSection)
    flow: FlowSection = field(default_factory=FlowSection)
    bootstrap: BootstrapSection = field(default_factory=BootstrapSection)
    monitors: MonitorSection = field(default_factory=MonitorSection)
    stability: StabilitySection = field(default_factory=StabilitySection)
    lemma: LemmaSection = field(default_factory=LemmaSection)
    harnack: HarnackSection = field(default_factory=HarnackSection)
    fit: FitSection = field(default_factory=FitSection)

    # -- derived objects -------------------------------------------------
    def grid_obj(self, N: int | None = None) -> PeriodicGrid:
        return PeriodicGrid(self.grid.n, N or self.grid.N)

    def metric_spec(self) -> MetricSpec:
        return MetricSpec.from_strings(self.metric.family, self.grid.n, self.metric.f, self.metric.d)

    def harmonic(self, second: bool = False) -> list[float]:
        c = self.initial.harmonic_b if second and self.initial.harmonic_b else self.initial.harmonic
        return [float(x) for x in c] if c else [0.0] * self.grid.n

    def poly(self, text: str) -> TrigPoly:
        return TrigPoly.parse(text, self.grid.n)

    def flow_config(self, **over) -> FlowConfig:
        kw = dataclasses.asdict(self.flow)
        kw.update(over)
        return FlowConfig(**kw)

    def harnack_config(self) -> HarnackConfig:
        return HarnackConfig(self.harnack.alpha, self.harnack.t1, self.harnack.t2)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "ExperimentConfig":
        try:
            _validate(self)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        return self


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.run.scenario not in SCENARIOS:
        raise ConfigError(f"run.scenario must be one of {', '.join(SCENARIOS)}; got {cfg.run.scenario!r}")
    n, N = cfg.grid.n, cfg.grid.N
    if n not in (1, 2, 3):
        raise ConfigError(f"grid.n must be 1, 2 or 3; got {n}")
    if N < 16 or N & (N - 1):
        raise ConfigError(f"grid.N must be a power of two >= 16; got {N}")
    if not 0 <= cfg.run.seed < 2 ** 64:
        raise ConfigError("run.seed must be a 64-bit unsigned integer")
    cfg.metric_spec()
    for c in (cfg.initial.harmonic, cfg.initial.harmonic_b):
        if c and len(c) != n:
            raise ConfigError(f"harmonic coefficients need {n} entries; got {len(c)}")
    cfg.poly(cfg.initial.potential)
    cfg.flow_config()
    cfg.harnack_config()
    if cfg.run.scenario == "uniqueness" and not cfg.initial.potential_b and not cfg.initial.harmonic_b:
        raise ConfigError("uniqueness needs initial.potential_b or initial.harmonic_b")
    if cfg.run.scenario == "uniqueness":
        cfg.poly(cfg.initial.potential_b)
    if cfg.run.scenario == "stability":
        if cfg.stability.rungs < 1 or not cfg.stability.factor > 1.0 or not cfg.stability.amplitude_start > 0:
            raise ConfigError("stability ladder needs rungs >= 1, factor > 1, amplitude_start > 0")
        cfg.poly(cfg.stability.shape)
    if cfg.run.scenario == "harnack":
        cfg.poly(cfg.harnack.v0)
    if not cfg.fit.t_a < cfg.fit.t_b:
        raise ConfigError("fit.t_a must be < fit.t_b")
    cfg.poly(cfg.lemma.base_potential)
    if not cfg.lemma.t_star > 0:
        raise ConfigError("lemma.t_star must be positive")


# ---------------------------------------------------------------------------
# loading and overrides


def _sections() -> dict[str, type]:
    return {f.name: f.default_factory().__class__ for f in fields(ExperimentConfig)}


def key_help() -> str:
    """One line per settable key with its default."""
    lines = []
    for sec, cls in _sections().items():
        for f in fields(cls):
            default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
            lines.append(f"  {sec}.{f.name} = {default!r}")
    return "\n".join(lines)


def _coerce(value: Any, proto: Any, key: str) -> Any:
    if isinstance(proto, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(proto, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(proto, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(proto, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return value
    if isinstance(proto, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    return value


def from_dict(data: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    secs = _sections()
    for sec, body in data.items():
        if sec not in secs:
            raise ConfigError(f"unknown section [{sec}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{sec}] must be a table")
        target = getattr(cfg, sec)
        known = {f.name for f in fields(target)}
        for k, v in body.items():
            if k not in known:
                raise ConfigError(f"unknown key {sec}.{k}")
            setattr(target, k, _coerce(v, getattr(target, k), f"{sec}.{k}"))
    return cfg


def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) != 2:
            raise ConfigError(f"--set key must look like section.key, got {key!r}")
        sec, name = parts
        if sec not in _sections():
            raise ConfigError(f"unknown section {sec!r} in --set")
        target = getattr(cfg, sec)
        if name not in {f.name for f in fields(target)}:
            raise ConfigError(f"unknown key {sec}.{name}")
        proto = getattr(target, name)
        value = raw.strip() if isinstance(proto, str) else _parse_value(raw.strip())
        setattr(target, name, _coerce(value, proto, key))
    return cfg


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> ExperimentConfig:
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = tomllib.loads(p.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
    cfg = from_dict(data)
    return apply_overrides(cfg, overrides or []).validate()


def dump_toml(cfg: ExperimentConfig) -> str:
    """Serialise back to TOML (flat sections, scalar or list values)."""
    out = []
    for sec, body in cfg.to_dict().items():
        out.append(f"[{sec}]")
        for k, v in body.items():
            out.append(f"{k} = {_toml_value(v)}")
        out.append("")
    return "\n".join(out)


def _toml_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return str(v)
