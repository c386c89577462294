"""Run configuration: a strict YAML schema with the reference pump as defaults.

Every section maps onto a dataclass; unknown keys, wrong types and values
that break an owning type's invariants are rejected with :class:`ConfigError`.

Schema (all keys optional)::

    pump:      PumpConfig fields (SI units, swashplate_angle in radians)
    mesh:      {n_theta, n_y}
    texture:   none | short | long
    waveform:  {shape: constant|trapezoid|table, low, high, duty, ramp,
                phase, table: [[angle_deg, pressure], ...]}
    solver:    {variant, omega, tol, max_iter, strategy, warm_start, path,
                initial_guess}
    dynamics:  {scheme, periods, steps_per_period, eps_dyn, max_picard,
                snapshot_every_deg, on_nonconvergence, pressure_floor}
    state:     {e, edot, shaft_angle, inlet_pressure, random}
    bench:     {variants, omegas, meshes, textures, tol, max_iter}
    joint_bench: {cases: [{name, texture, variant, omega}], tol, max_iter}
    outputs:   {figures, gnuplot, snapshots}
    workers:   int
    seed:      int
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass
from pathlib import Path

import yaml

from .dynamics import DynamicsOptions, SolverOptions, Waveform
from .dynamics import E0, EDOT0
from .geometry import TEXTURE_LAYOUTS, PumpConfig
from .krylov import Variant, default_omega_grid


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MeshConfig:
    n_theta: int = 200
    n_y: int = 160

    def __post_init__(self):
        if self.n_theta < 4 or self.n_y < 4:
            raise ValueError("mesh needs at least 4 nodes in each direction")


@dataclass(frozen=True)
class StateConfig:
    """State used by ``solve`` and as the initial condition of ``simulate``."""

    e: tuple = tuple(E0.tolist())
    edot: tuple = tuple(EDOT0.tolist())
    shaft_angle: float = 0.0
    inlet_pressure: float | None = None  # None: take it from the waveform
    random: bool = False  # draw (e, edot) from the seed instead

    def __post_init__(self):
        if len(self.e) != 4 or len(self.edot) != 4:
            raise ValueError("e and edot need four components")


@dataclass(frozen=True)
class BenchConfig:
    variants: tuple = ("jacobian", "assor1", "assor2", "ssor")
    omegas: tuple = tuple(default_omega_grid())
    meshes: tuple = ((100, 80),)
    textures: tuple = ("none",)
    tol: float = 1e-6
    max_iter: int = 100_000


@dataclass(frozen=True)
class JointCase:
    name: str = "smooth"
    texture: str = "none"
    variant: str = "assor2"
    omega: float = 1.8


@dataclass(frozen=True)
class JointBenchConfig:
    cases: tuple = (JointCase(),)
    tol: float = 1e-6
    max_iter: int = 100_000


@dataclass(frozen=True)
class OutputConfig:
    figures: bool = True
    gnuplot: bool = True
    snapshots: bool = True


@dataclass(frozen=True)
class RunConfig:
    pump: PumpConfig = PumpConfig()
    mesh: MeshConfig = MeshConfig()
    texture: str = "none"
    waveform: Waveform = Waveform()
    solver: SolverOptions = SolverOptions()
    dynamics: DynamicsOptions = DynamicsOptions()
    state: StateConfig = StateConfig()
    bench: BenchConfig = BenchConfig()
    joint_bench: JointBenchConfig = JointBenchConfig()
    outputs: OutputConfig = OutputConfig()
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.texture not in TEXTURE_LAYOUTS:
            raise ValueError(f"unknown texture kind {self.texture!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        _check_solver(self.solver)
        _check_dynamics(self.dynamics)
        for v in self.bench.variants:
            Variant(v)
        for c in self.joint_bench.cases:
            Variant(c.variant)
            if c.texture not in TEXTURE_LAYOUTS:
                raise ValueError(f"unknown texture kind {c.texture!r}")
        for t in self.bench.textures:
            if t not in TEXTURE_LAYOUTS:
                raise ValueError(f"unknown texture kind {t!r}")


def _check_solver(s: SolverOptions):
    Variant(s.variant)
    if s.tol <= 0 or s.max_iter < 1:
        raise ValueError("solver tol must be > 0 and max_iter >= 1")
    if s.variant != "jacobian" and not 0 < s.omega < 2:
        raise ValueError("omega must lie in (0, 2)")
    if s.strategy not in ("synchronized", "asynchronous"):
        raise ValueError(f"unknown strategy {s.strategy!r}")
    if s.path not in ("joint", "sequential"):
        raise ValueError(f"unknown solve path {s.path!r}")
    if s.initial_guess not in ("zero", "linear"):
        raise ValueError(f"unknown initial guess {s.initial_guess!r}")


def _check_dynamics(d: DynamicsOptions):
    if d.scheme not in ("general", "simplified"):
        raise ValueError(f"unknown scheme {d.scheme!r}")
    if d.periods < 0 or d.steps_per_period < 1:
        raise ValueError("periods must be >= 0 and steps_per_period >= 1")
    if d.eps_dyn <= 0 or d.max_picard < 1:
        raise ValueError("eps_dyn must be > 0 and max_picard >= 1")
    if d.on_nonconvergence not in ("continue", "halt"):
        raise ValueError(f"unknown non-convergence policy {d.on_nonconvergence!r}")


# --------------------------------------------------------------------------
# strict (de)serialisation

def _convert(tp, value, where: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _convert(args[0], value, where)
    raise ConfigError(f"{where}: unsupported type {tp}")


# element types of tuple-valued fields
_ELEMENTS = {
    (StateConfig, "e"): float, (StateConfig, "edot"): float,
    (BenchConfig, "variants"): str, (BenchConfig, "omegas"): float,
    (BenchConfig, "meshes"): "pair", (BenchConfig, "textures"): str,
    (JointBenchConfig, "cases"): JointCase,
    (Waveform, "table"): "point",
}


def _build(cls, data, where: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        path = f"{where}.{key}" if where else key
        elem = _ELEMENTS.get((cls, key))
        if elem is not None:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{path}: expected a list")
            kwargs[key] = tuple(_element(elem, v, f"{path}[{i}]")
                                for i, v in enumerate(value))
        else:
            kwargs[key] = _convert(hints[key], value, path)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{where or 'config'}: {err}") from None


def _element(kind, value, where):
    if kind in ("pair", "point"):
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise ConfigError(f"{where}: expected a pair")
        conv = int if kind == "pair" else float
        return tuple(_convert(conv, v, where) for v in value)
    return _convert(kind, value, where)


def from_dict(data) -> RunConfig:
    return _build(RunConfig, data, "")


def to_dict(cfg) -> dict:
    def plain(v):
        if dataclasses.is_dataclass(v):
            return {f.name: plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, (tuple, list)):
            return [plain(x) for x in v]
        return v
    return plain(cfg)


def load(path) -> RunConfig:
    """Read and validate a YAML run configuration."""
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: malformed YAML: {err}") from None
    return from_dict(data)


def dump(cfg: RunConfig, path=None) -> str:
    text = yaml.safe_dump(to_dict(cfg), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text


def default_text() -> str:
    """The default configuration, as written by ``pistonlub config``."""
    return dump(RunConfig())
