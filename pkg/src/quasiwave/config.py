"""Experiment configuration: one TOML file, one section per component."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .model import BoundaryTensionProfile, TensionModel, make_linear_tension, make_softplus_tension

DEFAULT_CONFIG = Path(__file__).with_name("default.toml")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"config key '{key}': {message}")
        self.key = key


@dataclass(frozen=True)
class ModelSection:
    law: str = "softplus"
    c1: float = 1.0
    c2: float = 2.0
    c: float = 1.0  # stiffness of the linear law


@dataclass(frozen=True)
class BoundarySection:
    strain_start: float = 0.0
    strain_end: float = 1.0
    t_star: float = 1.0


@dataclass(frozen=True)
class InitialSection:
    r_amp: float = 0.5
    p_amp: float = 0.25
    mollifier_h: float = 0.0


@dataclass(frozen=True)
class GridSection:
    M: int = 200
    T: float = 2.0
    scheme: str = "imex"


@dataclass(frozen=True)
class SolveSection:
    delta: float = 0.05
    trajectory_stride: int = 10


@dataclass(frozen=True)
class SweepSection:
    deltas: list = field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025, 0.0125])
    boxes: list = field(default_factory=lambda: [8, 8])
    trajectory_stride: int = 0


@dataclass(frozen=True)
class EntropySection:
    n2: int = 64
    datum: str = "bump"
    tol_series: float = 1e-10
    max_depth: int = 64
    margin: float = 0.2


@dataclass(frozen=True)
class GreensSection:
    samples: int = 1000
    delta: float = 0.05
    refinement: list = field(default_factory=lambda: [100, 200])


@dataclass(frozen=True)
class ChainSection:
    sizes: list = field(default_factory=lambda: [64, 128, 256])
    ensemble: int = 64
    beta_inv: float = 0.02
    delta0: float = 1.0
    stiffness: float = 1.0
    T: float = 1.0
    samples: int = 5


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs"
    model: ModelSection = field(default_factory=ModelSection)
    boundary: BoundarySection = field(default_factory=BoundarySection)
    initial: InitialSection = field(default_factory=InitialSection)
    grid: GridSection = field(default_factory=GridSection)
    solve: SolveSection = field(default_factory=SolveSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    entropy: EntropySection = field(default_factory=EntropySection)
    greens: GreensSection = field(default_factory=GreensSection)
    chain: ChainSection = field(default_factory=ChainSection)

    def tension_model(self) -> TensionModel:
        m = self.model
        if m.law == "softplus":
            return make_softplus_tension(m.c1, m.c2)
        return make_linear_tension(m.c)

    def boundary_profile(self) -> BoundaryTensionProfile:
        model = self.tension_model()
        b = self.boundary
        return BoundaryTensionProfile(float(model.tau(b.strain_start)), float(model.tau(b.strain_end)), b.t_star)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# parsing and validation
# ---------------------------------------------------------------------------


def _coerce(key: str, value: Any, default: Any):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(key, f"expected {type(default).__name__}, got {value!r}")
    return value


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(prefix.rstrip("."), "expected a table")
    names = {f.name: f for f in dataclasses.fields(cls)}
    for k in data:
        if k not in names:
            raise ConfigError(prefix + k, "unknown key")
    kwargs = {}
    defaults = cls()
    for name, f in names.items():
        default = getattr(defaults, name)
        if name not in data:
            continue
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), data[name], f"{prefix}{name}.")
        else:
            kwargs[name] = _coerce(prefix + name, data[name], default)
    return cls(**kwargs)


def _positive(key, v):
    if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
        raise ConfigError(key, f"must be positive and finite, got {v!r}")


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check every value against the preconditions of the module that consumes it."""
    m = cfg.model
    if m.law not in ("softplus", "linear"):
        raise ConfigError("model.law", f"must be 'softplus' or 'linear', got {m.law!r}")
    if m.law == "softplus":
        _positive("model.c1", m.c1)
        if not m.c2 > m.c1:
            raise ConfigError("model.c2", f"must exceed model.c1={m.c1}, got {m.c2}")
    else:
        _positive("model.c", m.c)
    _positive("boundary.t_star", cfg.boundary.t_star)
    if cfg.initial.mollifier_h < 0:
        raise ConfigError("initial.mollifier_h", "must be non-negative")
    if cfg.grid.M < 4:
        raise ConfigError("grid.M", f"need at least 4 cells, got {cfg.grid.M}")
    if cfg.grid.T < 0:
        raise ConfigError("grid.T", f"must be non-negative, got {cfg.grid.T}")
    if cfg.grid.scheme not in ("imex", "explicit"):
        raise ConfigError("grid.scheme", f"must be 'imex' or 'explicit', got {cfg.grid.scheme!r}")
    _positive("solve.delta", cfg.solve.delta)
    if cfg.solve.trajectory_stride < 0:
        raise ConfigError("solve.trajectory_stride", "must be non-negative")
    d = cfg.sweep.deltas
    if not d:
        raise ConfigError("sweep.deltas", "must list at least one viscosity")
    for i, v in enumerate(d):
        _positive(f"sweep.deltas[{i}]", v)
    if any(b >= a for a, b in zip(d, d[1:])):
        raise ConfigError("sweep.deltas", f"must be strictly decreasing, got {d}")
    if len(cfg.sweep.boxes) != 2 or any(not isinstance(b, int) or b < 1 for b in cfg.sweep.boxes):
        raise ConfigError("sweep.boxes", f"must be two positive integers, got {cfg.sweep.boxes}")
    e = cfg.entropy
    if e.n2 < 4:
        raise ConfigError("entropy.n2", f"need at least 4 cells, got {e.n2}")
    if e.datum not in ("bump", "hat"):
        raise ConfigError("entropy.datum", f"must be 'bump' or 'hat', got {e.datum!r}")
    _positive("entropy.tol_series", e.tol_series)
    if e.max_depth < 1:
        raise ConfigError("entropy.max_depth", "must be at least 1")
    if e.margin < 0:
        raise ConfigError("entropy.margin", "must be non-negative")
    g = cfg.greens
    if g.samples < 1:
        raise ConfigError("greens.samples", "must be at least 1")
    _positive("greens.delta", g.delta)
    if len(g.refinement) != 2 or g.refinement[1] != 2 * g.refinement[0] or g.refinement[0] < 4:
        raise ConfigError("greens.refinement", f"must be [M, 2M] with M >= 4, got {g.refinement}")
    c = cfg.chain
    if not c.sizes or any(not isinstance(n, int) or n < 2 for n in c.sizes):
        raise ConfigError("chain.sizes", f"must be integers >= 2, got {c.sizes}")
    if c.ensemble < 2:
        raise ConfigError("chain.ensemble", "need at least 2 members for standard errors")
    _positive("chain.beta_inv", c.beta_inv)
    _positive("chain.delta0", c.delta0)
    _positive("chain.stiffness", c.stiffness)
    _positive("chain.T", c.T)
    if c.samples < 2:
        raise ConfigError("chain.samples", "need at least 2 sample times")
    return cfg


def parse_config(data: dict) -> ExperimentConfig:
    return validate(_build(ExperimentConfig, data, ""))


def load_config(path: str | Path | None = None) -> ExperimentConfig:
    """Read and validate a TOML config; ``None`` loads the shipped default."""
    path = DEFAULT_CONFIG if path is None else Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"cannot parse {path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from exc
    return parse_config(data)
