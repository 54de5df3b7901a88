"""Command-line front-end: `stackwave <command> [--config PATH] [--out DIR] ...`."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import artifacts
from .config import (
    ConfigError,
    ExperimentConfig,
    config_hash,
    configure_experiment,
    expand_sweep,
    load_config,
    make_follower_problem,
    make_leader_problem,
    make_profile,
)
from .discretization import CFLViolation, NormKind, ShapeError, norm
from .follower import FollowerConvergenceError, FollowerIterationError, solve_follower
from .geometry import (
    GeometryError,
    ProfileKind,
    control_time_thresholds_mp,
    eval_profile,
    validate_hypotheses,
)
from .leader import ControlTimeWarning, LeaderIterationError, check_control_time, solve_leader
from .oracle import OracleSizeError, append_oracle_report
from .runtime import JobCancelled, run, run_ordered
from .verify import run_identity_suite
from .wave_solver import ForwardProblem, SolverDivergenceError, solve_forward

logger = logging.getLogger("stackwave")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_VERIFY = 3

COMMANDS = ("validate", "thresholds", "simulate", "follower", "leader", "verify", "sweep")

CONFIG_ERRORS = (ConfigError, GeometryError, ShapeError, CFLViolation)
SOLVER_ERRORS = (
    SolverDivergenceError,
    FollowerIterationError,
    FollowerConvergenceError,
    LeaderIterationError,
    OracleSizeError,
    JobCancelled,
)


class VerificationFailed(RuntimeError):
    pass


def _install_logging(verbose: bool) -> None:
    root = logging.getLogger("stackwave")
    if any(getattr(h, "_stackwave", False) for h in root.handlers):
        return
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("[stackwave] %(message)s"))
    handler._stackwave = True
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


def _require_hypotheses(cfg: ExperimentConfig) -> None:
    report = validate_hypotheses(make_profile(cfg), cfg.T)
    if report.ok:
        return
    failed = ", ".join(report.failures())
    if not cfg.allow_degenerate:
        raise ConfigError(f"profile violates {failed}; pass --allow-degenerate to run anyway")
    logger.warning("running with degenerate profile: %s", failed)


def _threshold_gate(cfg: ExperimentConfig, problem) -> None:
    if cfg.threshold_policy == "ignore":
        warnings.simplefilter("ignore", ControlTimeWarning)
        return
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ControlTimeWarning)
        threshold, below = check_control_time(problem)
    if below and cfg.threshold_policy == "error":
        raise ConfigError(f"T={cfg.T:g} does not exceed the sufficient control time {threshold:.6g}")


def cmd_validate(cfg: ExperimentConfig, out_dir: str) -> List[str]:
    profile = make_profile(cfg)
    report = validate_hypotheses(profile, cfg.T)
    path = artifacts.write_csv(
        os.path.join(out_dir, "hypotheses.csv"),
        ["h1", "h2", "h3", "observed_min_speed", "observed_max_speed", "m", "M", "samples"],
        [[report.h1_ok, report.h2_ok, report.h3_ok, report.observed_min_speed,
          report.observed_max_speed, profile.m, profile.M, report.samples]],
    )
    if report.ok:
        logger.info("hypotheses H1-H3 hold on [0, %g]", cfg.T)
    else:
        logger.warning("hypotheses failed: %s", ", ".join(report.failures()))
        if not cfg.allow_degenerate:
            raise ConfigError("profile violates " + ", ".join(report.failures()))
    return [path]


def cmd_thresholds(cfg: ExperimentConfig, out_dir: str) -> List[str]:
    profile = make_profile(cfg)
    t1, t2 = control_time_thresholds_mp(profile.m, profile.M)
    logger.info("T1=%s T2=%s for m=%g M=%g", t1, t2, profile.m, profile.M)
    path = artifacts.write_csv(
        os.path.join(out_dir, "thresholds.csv"),
        ["m", "M", "T1", "T2"],
        [[profile.m, profile.M, float(t1), float(t2)]],
    )
    return [path]


def _exact_separated(cfg: ExperimentConfig, grid) -> Optional[np.ndarray]:
    """Standing wave a sin(n pi y) cos(n pi t) when alpha == 1, z0 = sin:n[:a] and z1 = 0."""
    if ProfileKind(cfg.profile_kind) is not ProfileKind.AFFINE or cfg.profile_parameter != 0.0:
        return None
    if cfg.z1 != "zero" or not cfg.z0.startswith("sin:"):
        return None
    parts = cfg.z0.split(":")[1:]
    n = int(parts[0])
    amplitude = float(parts[1]) if len(parts) == 2 else 1.0
    return amplitude * np.outer(np.cos(n * np.pi * grid.times), np.sin(n * np.pi * grid.nodes))


def cmd_simulate(cfg: ExperimentConfig, out_dir: str) -> List[str]:
    _require_hypotheses(cfg)
    template = make_follower_problem(cfg)
    grid = template.grid
    zeros = np.zeros(grid.Nt + 1)
    state, pair = solve_forward(
        ForwardProblem(grid, template.profile, template.z0, template.z1, zeros, zeros)
    )
    exact = _exact_separated(cfg, grid)
    alphas, _, _ = eval_profile(template.profile, grid.times)
    alphas = np.broadcast_to(alphas, grid.times.shape)
    rows = []
    for n, t in enumerate(grid.times):
        level = state.values[n]
        error = norm(level - exact[n], NormKind.L2_OMEGA, grid) if exact is not None else None
        rows.append([n, t, alphas[n], norm(level, NormKind.L2_OMEGA, grid), error])
    written = [
        artifacts.write_field(os.path.join(out_dir, "state.field"), state),
        artifacts.write_slice(os.path.join(out_dir, "terminal_position.slice"), pair.position, grid),
        artifacts.write_slice(os.path.join(out_dir, "terminal_velocity.slice"), pair.velocity, grid),
        artifacts.write_csv(os.path.join(out_dir, "simulate.csv"), ["level", "t", "alpha", "l2_norm", "exact_error"], rows),
    ]
    if exact is not None:
        logger.info("final L2 error against the standing wave: %.3e", rows[-1][-1])
    return written


def cmd_follower(cfg: ExperimentConfig, out_dir: str) -> List[str]:
    _require_hypotheses(cfg)
    solution = solve_follower(make_follower_problem(cfg))
    return artifacts.save_follower_solution(os.path.join(out_dir, "follower"), solution)


def cmd_leader(cfg: ExperimentConfig, out_dir: str) -> List[str]:
    _require_hypotheses(cfg)
    problem = make_leader_problem(cfg)
    _threshold_gate(cfg, problem)
    solution = solve_leader(problem)
    return artifacts.save_leader_solution(os.path.join(out_dir, "leader"), solution)


def cmd_verify(cfg: ExperimentConfig, out_dir: str, jobs: int = 1) -> List[str]:
    _require_hypotheses(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ControlTimeWarning)
        records = run_identity_suite(cfg, jobs=jobs)
    path = artifacts.write_csv(
        os.path.join(out_dir, "verify.csv"),
        ["identity", "instance_hash", "discrepancy", "tolerance", "passed"],
        [[r.test_id, r.instance, r.discrepancy, r.tolerance, r.passed] for r in records],
    )
    written = [path]
    if cfg.dense_oracle:
        report = os.path.join(out_dir, "oracle_report.csv")
        append_oracle_report(report, [r for r in records if r.test_id.startswith("dense_")])
        written.append(report)
    failed = [r.test_id for r in records if not r.passed]
    if failed:
        raise VerificationFailed("identities outside tolerance: " + ", ".join(failed), written)
    return written


SWEEP_COLUMNS = [
    "status",
    "leader_cost",
    "theta",
    "duality_gap",
    "terminal_position_error",
    "terminal_velocity_error",
    "admissible",
    "iterations",
]


def _sweep_instance(cfg: ExperimentConfig) -> Dict[str, object]:
    """One leader solve; failures become a status string so the sweep keeps going."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ControlTimeWarning)
        try:
            _require_hypotheses(cfg)
            solution = solve_leader(make_leader_problem(cfg))
        except CONFIG_ERRORS + SOLVER_ERRORS as exc:
            return {"status": f"{type(exc).__name__}"}
    return {
        "status": "ok",
        "leader_cost": solution.leader_cost,
        "theta": solution.theta_value,
        "duality_gap": solution.duality_gap,
        "terminal_position_error": solution.terminal_position_error,
        "terminal_velocity_error": solution.terminal_velocity_error,
        "admissible": solution.admissible,
        "iterations": solution.iterations,
    }


def cmd_sweep(cfg: ExperimentConfig, out_dir: str, jobs: int = 1) -> List[str]:
    if not cfg.sweep:
        raise ConfigError("sweep needs a [sweep] section")
    instances = expand_sweep(cfg)
    keys = list(cfg.sweep)
    logger.info("sweeping %d instances over %s with %d job(s)", len(instances), ", ".join(keys), jobs)
    results = run_ordered(_sweep_instance, instances, jobs=jobs)
    rows = []
    for i, (instance, result) in enumerate(zip(instances, results)):
        rows.append([i] + [getattr(instance, k) for k in keys] + [result.get(c) for c in SWEEP_COLUMNS])
    path = artifacts.write_csv(os.path.join(out_dir, "sweep.csv"), ["instance"] + keys + SWEEP_COLUMNS, rows)
    return [path]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stackwave",
        description="Leader/follower boundary control of the wave equation on a moving interval",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="sectioned key=value experiment file")
    parser.add_argument("--out", help="output directory (overrides [output] out_dir)")
    parser.add_argument("--seed", type=int, help="random seed for verification instances")
    parser.add_argument("--allow-degenerate", action="store_true", help="run profiles that violate H1-H3")
    parser.add_argument("--dense-oracle", action="store_true", help="add dense oracle checks to verify")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes for sweep instances and dense oracle columns")
    parser.add_argument("--verbose", action="store_true", help="log iteration progress")
    return parser


def _load(args) -> ExperimentConfig:
    overrides = {
        "out_dir": args.out,
        "seed": args.seed,
        "allow_degenerate": True if args.allow_degenerate else None,
        "dense_oracle": True if args.dense_oracle else None,
    }
    if args.config:
        return load_config(args.config, **overrides)
    return configure_experiment(**{k: v for k, v in overrides.items() if v is not None})


def _dispatch(command: str, cfg: ExperimentConfig, jobs: int) -> List[str]:
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    handlers = {
        "validate": cmd_validate,
        "thresholds": cmd_thresholds,
        "simulate": cmd_simulate,
        "follower": cmd_follower,
        "leader": cmd_leader,
        "verify": cmd_verify,
    }
    if command == "sweep":
        written = cmd_sweep(cfg, out_dir, jobs=jobs)
    elif command == "verify":
        written = cmd_verify(cfg, out_dir, jobs=jobs)
    else:
        written = handlers[command](cfg, out_dir)
    written.append(artifacts.write_manifest(out_dir, config_hash(cfg), written))
    return written


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
    except CONFIG_ERRORS as exc:
        print(f"[stackwave] config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.verbose or cfg.progress_to_terminal:
        _install_logging(args.verbose)
    if args.jobs < 1:
        print("[stackwave] config error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG

    try:
        with warnings.catch_warnings():
            written = run(_dispatch, args.command, cfg, args.jobs)
    except VerificationFailed as exc:
        written = exc.args[1]
        artifacts.write_manifest(cfg.out_dir, config_hash(cfg), written)
        print(f"[stackwave] verification failed: {exc.args[0]}", file=sys.stderr)
        return EXIT_VERIFY
    except CONFIG_ERRORS as exc:
        print(f"[stackwave] config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SOLVER_ERRORS as exc:
        print(f"[stackwave] solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    logger.info("wrote %d artifacts to %s", len(written), cfg.out_dir)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
