"""Experiment configuration: validation, the sectioned config file and problem builders."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from .discretization import CFLViolation, Grid, ShapeError, build_grid
from .follower import FollowerProblem, FollowerSettings
from .geometry import (
    BoundaryProfile,
    GeometryError,
    PhysicalData,
    ProfileKind,
    Side,
    eval_profile,
    read_columnar,
    transform_data,
)
from .leader import LeaderProblem, LeaderSettings

#the config file maps onto ExperimentConfig one section at a time; every key
#must belong to its section and every value goes through configure_experiment


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    profile_kind: str = "affine"
    profile_parameter: float = 0.3
    m: Optional[float] = None
    M: Optional[float] = None
    Ny: int = 16
    Nt: int = 160
    T: float = 1.6
    cfl_ratio: float = 0.4
    side: str = "gamma0"
    sigma: float = 100.0
    mu: float = 100.0
    epsilon: float = 1e-2
    margin: float = 1e-3
    z0: str = "zero"
    z1: str = "zero"
    v0: str = "zero"
    v1: str = "zero"
    z2: str = "zero"
    z4: str = "zero"
    frame: str = "cylinder"
    follower_tol: float = 1e-10
    follower_max_iter: int = 500
    fixed_point_tol: float = 1e-10
    fixed_point_max_iter: int = 200
    leader_tol: float = 1e-8
    leader_max_iter: int = 2000
    allow_degenerate: bool = False
    dense_oracle: bool = False
    threshold_policy: str = "warn"
    progress_to_terminal: bool = False
    out_dir: str = "out"
    seed: int = 0
    sweep: Dict[str, List[Any]] = field(default_factory=dict)


SECTIONS: Dict[str, List[str]] = {
    "profile": ["kind", "parameter", "m", "M"],
    "grid": ["Ny", "Nt", "T", "cfl_ratio"],
    "control": ["side", "sigma", "mu", "epsilon", "margin"],
    "targets": ["z0", "z1", "v0", "v1", "z2", "z4", "frame"],
    "solver": ["follower_tol", "follower_max_iter", "fixed_point_tol", "fixed_point_max_iter", "leader_tol", "leader_max_iter"],
    "flags": ["allow_degenerate", "dense_oracle", "threshold_policy", "progress_to_terminal"],
    "output": ["out_dir", "seed"],
}

# profile keys are stored with a prefix on the dataclass
_RENAMED = {("profile", "kind"): "profile_kind", ("profile", "parameter"): "profile_parameter"}

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
_SWEEPABLE = [f.name for f in dataclasses.fields(ExperimentConfig) if f.name not in ("sweep", "out_dir")]


def _check_target_spec(name: str, spec: str) -> None:
    kind, _, rest = spec.partition(":")
    if kind == "zero" and not rest:
        return
    try:
        if kind == "sin":
            parts = rest.split(":")
            if len(parts) not in (1, 2):
                raise ValueError
            int(parts[0])
            if len(parts) == 2:
                float(parts[1])
            return
        if kind == "poly":
            [float(c) for c in rest.split(",")]
            return
    except ValueError:
        raise ConfigError(f"{name}: malformed target spec {spec!r}") from None
    if kind == "file" and rest:
        return
    raise ConfigError(f"{name}: unknown target spec {spec!r}; use zero, sin:n[:amp], poly:c0,c1,.. or file:path")


#user-supplied values are validated here and collected into an ExperimentConfig
def configure_experiment(**kwargs) -> ExperimentConfig:
    """Build a validated ExperimentConfig; unknown keywords are errors."""
    unknown = sorted(set(kwargs) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    cfg = ExperimentConfig(**kwargs)

    try:
        kind = ProfileKind(cfg.profile_kind)
    except ValueError:
        raise ConfigError(f"profile kind must be 'affine' or 'arctan', got {cfg.profile_kind!r}") from None
    if kind is ProfileKind.CUSTOM:
        raise ConfigError("custom profiles are only available through the Python API")
    if kind is ProfileKind.ARCTAN_DRIFT and not cfg.profile_parameter > 0:
        raise ConfigError("arctan drift parameter must be positive")
    if (cfg.m is None) != (cfg.M is None):
        raise ConfigError("give both m and M or neither")

    for name in ("Ny", "Nt", "follower_max_iter", "fixed_point_max_iter", "leader_max_iter"):
        if int(getattr(cfg, name)) <= 0:
            raise ConfigError(f"{name} must be positive")
    for name in ("T", "cfl_ratio", "sigma", "mu", "epsilon", "follower_tol", "fixed_point_tol", "leader_tol"):
        value = getattr(cfg, name)
        if not (math.isfinite(value) and value > 0):
            raise ConfigError(f"{name} must be positive, got {value}")
    if not 0.0 <= cfg.margin < 1.0:
        raise ConfigError("margin must lie in [0, 1)")
    try:
        Side(cfg.side)
    except ValueError:
        raise ConfigError(f"side must be 'gamma0' or 'gamma_alpha', got {cfg.side!r}") from None
    if cfg.frame not in ("cylinder", "physical"):
        raise ConfigError("frame must be 'cylinder' or 'physical'")
    if cfg.threshold_policy not in ("warn", "error", "ignore"):
        raise ConfigError("threshold_policy must be one of warn, error, ignore")
    for name in ("z0", "z1", "v0", "v1", "z2", "z4"):
        _check_target_spec(name, getattr(cfg, name))
    if cfg.seed < 0:
        raise ConfigError("seed must be non-negative")
    for key in cfg.sweep:
        if key not in _SWEEPABLE:
            raise ConfigError(f"sweep key {key!r} is not a configuration field")
        if not cfg.sweep[key]:
            raise ConfigError(f"sweep key {key!r} has no values")

    try:
        build_grid(cfg.Ny, cfg.Nt, cfg.T, cfg.cfl_ratio)
    except (ShapeError, CFLViolation) as exc:
        raise ConfigError(f"grid: {exc}") from exc
    return cfg


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    text = raw.strip()
    try:
        if kind in ("int",):
            return int(text)
        if kind in ("float",):
            return float(text)
        if kind in ("Optional[float]",):
            return None if text.lower() in ("", "none") else float(text)
        if kind in ("bool",):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind}") from None
    return text


def load_config(path: str, **overrides) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    values: Dict[str, Any] = {}
    sweep: Dict[str, List[Any]] = {}
    for section in parser.sections():
        if section == "sweep":
            for key, raw in parser.items(section):
                if key not in _SWEEPABLE:
                    raise ConfigError(f"[sweep] {key!r} is not a configuration field")
                sweep[key] = [_coerce(key, part) for part in raw.split(",") if part.strip()]
            continue
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            name = _RENAMED.get((section, key), key)
            values[name] = _coerce(name, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    if sweep:
        values["sweep"] = sweep
    return configure_experiment(**values)


def canonical_text(cfg: ExperimentConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "sweep":
            value = ";".join(f"{k}={','.join(map(repr, v))}" for k, v in sorted(value.items()))
        lines.append(f"{f.name}={value!r}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_text(cfg).encode("utf-8")).hexdigest()


def expand_sweep(cfg: ExperimentConfig) -> List[ExperimentConfig]:
    """Cartesian product of the sweep values, in key order then value order."""
    if not cfg.sweep:
        return [cfg]
    keys = list(cfg.sweep)
    out = []
    for combo in itertools.product(*(cfg.sweep[k] for k in keys)):
        kwargs = dataclasses.asdict(cfg)
        kwargs.update(dict(zip(keys, combo)))
        kwargs["sweep"] = {}
        out.append(configure_experiment(**kwargs))
    return out


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def make_profile(cfg: ExperimentConfig) -> BoundaryProfile:
    if ProfileKind(cfg.profile_kind) is ProfileKind.AFFINE:
        return BoundaryProfile.affine(cfg.profile_parameter, cfg.m, cfg.M)
    return BoundaryProfile.arctan_drift(cfg.profile_parameter, cfg.m, cfg.M)


def make_grid(cfg: ExperimentConfig) -> Grid:
    return build_grid(cfg.Ny, cfg.Nt, cfg.T, cfg.cfl_ratio)


def evaluate_slice(spec: str, nodes: np.ndarray) -> np.ndarray:
    """A target spec sampled at increasing points; file values are spread evenly over their span."""
    kind, _, rest = spec.partition(":")
    if kind == "zero":
        return np.zeros_like(nodes)
    if kind == "sin":
        parts = rest.split(":")
        amplitude = float(parts[1]) if len(parts) == 2 else 1.0
        return amplitude * np.sin(int(parts[0]) * np.pi * nodes)
    if kind == "poly":
        coeffs = [float(c) for c in rest.split(",")]
        return np.polynomial.polynomial.polyval(nodes, coeffs)
    try:
        values = read_columnar(rest)
    except (OSError, ValueError, GeometryError) as exc:
        raise ConfigError(f"cannot read target file {rest}: {exc}") from exc
    if values.size < 2:
        raise ConfigError(f"target file {rest} needs at least two values")
    return np.interp(nodes, np.linspace(nodes[0], nodes[-1], values.size), values)


def evaluate_field(spec: str, nodes: np.ndarray, grid: Grid) -> np.ndarray:
    """A space-time target: the slice spec repeated on every time level."""
    return np.tile(evaluate_slice(spec, nodes), (grid.Nt + 1, 1))


def _data(cfg: ExperimentConfig, grid: Grid, profile: BoundaryProfile, side: Side):
    nodes = grid.nodes
    tracking_spec = cfg.z2 if side is Side.GAMMA_0 else cfg.z4
    z0 = evaluate_slice(cfg.z0, nodes)
    z1 = evaluate_slice(cfg.z1, nodes)
    if cfg.frame != "physical":
        return z0, z1, evaluate_slice(cfg.v0, nodes), evaluate_field(tracking_spec, nodes, grid)

    # terminal and tracking specs are functions of x on [0, alpha(T)]
    alpha_T, _, _ = eval_profile(profile, grid.T)
    x = alpha_T * nodes
    tracking = evaluate_field(tracking_spec, x, grid)
    data = PhysicalData(
        u0=z0,
        u1=z1,
        uT=evaluate_slice(cfg.v0, x),
        u2=tracking if side is Side.GAMMA_0 else None,
        u4=tracking if side is Side.GAMMA_ALPHA else None,
    )
    transformed = transform_data(data, profile, grid)
    tracking = transformed.z2 if side is Side.GAMMA_0 else transformed.z4
    return transformed.z0, transformed.z1, transformed.v0, tracking


def make_follower_problem(cfg: ExperimentConfig, side: Optional[Side] = None) -> FollowerProblem:
    side = Side(cfg.side) if side is None else Side(side)
    grid = make_grid(cfg)
    profile = make_profile(cfg)
    z0, z1, _, tracking = _data(cfg, grid, profile, side)
    return FollowerProblem(
        grid=grid,
        profile=profile,
        side=side,
        penalty=cfg.sigma if side is Side.GAMMA_0 else cfg.mu,
        tracking_target=tracking,
        z0=z0,
        z1=z1,
        settings=FollowerSettings(
            tol=cfg.follower_tol,
            max_iter=cfg.follower_max_iter,
            fixed_point_tol=cfg.fixed_point_tol,
            fixed_point_max_iter=cfg.fixed_point_max_iter,
        ),
    )


def make_leader_problem(cfg: ExperimentConfig, side: Optional[Side] = None) -> LeaderProblem:
    template = make_follower_problem(cfg, side)
    _, _, v0, _ = _data(cfg, template.grid, template.profile, template.side)
    return LeaderProblem(
        follower_template=template,
        v0=v0,
        v1=evaluate_slice(cfg.v1, template.grid.nodes),
        epsilon=cfg.epsilon,
        margin=cfg.margin,
        settings=LeaderSettings(tol=cfg.leader_tol, max_iter=cfg.leader_max_iter),
    )
