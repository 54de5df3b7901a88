"""Columnar text files, CSV tables and the run manifest."""

from __future__ import annotations

import csv
import logging
import os
from typing import Iterable, List, Sequence

import numpy as np

from . import __version__
from .discretization import BoundaryTrace, Field, Grid

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def _header(grid: Grid) -> str:
    return f"Ny={grid.Ny} Nt={grid.Nt} T={grid.T!r}"


def write_field(path: str, field: Field) -> str:
    """One row per time level, one column per node."""
    np.savetxt(path, field.values, fmt=FLOAT_FORMAT, header=_header(field.grid))
    return path


def write_trace(path: str, trace: BoundaryTrace) -> str:
    np.savetxt(path, trace.values, fmt=FLOAT_FORMAT, header=f"{_header(trace.grid)} side={trace.side.value}")
    return path


def write_slice(path: str, values: np.ndarray, grid: Grid) -> str:
    np.savetxt(path, np.asarray(values, dtype=float), fmt=FLOAT_FORMAT, header=_header(grid))
    return path


def read_array(path: str) -> np.ndarray:
    return np.loadtxt(path, comments="#", ndmin=1)


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % value
    if value is None:
        return ""
    return str(value)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    return path


def write_report(path: str, values: dict) -> str:
    """Two-column key,value CSV."""
    return write_csv(path, ["key", "value"], values.items())


def write_manifest(out_dir: str, config_digest: str, artifacts: List[str]) -> str:
    path = os.path.join(out_dir, "manifest.txt")
    names = sorted(os.path.relpath(a, out_dir) for a in artifacts)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"tool=stackwave {__version__}\n")
        f.write(f"config_sha256={config_digest}\n")
        for name in names:
            f.write(f"artifact={name}\n")
    logger.debug("wrote manifest with %d artifacts", len(names))
    return path


def save_follower_solution(out_dir: str, solution) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = [
        write_trace(os.path.join(out_dir, "follower.trace"), solution.follower),
        write_field(os.path.join(out_dir, "state.field"), solution.state),
        write_field(os.path.join(out_dir, "adjoint.field"), solution.adjoint),
        write_report(
            os.path.join(out_dir, "report.csv"),
            {
                "cost": solution.cost,
                "characterization_residual": solution.characterization_residual,
                "characterization_sign": solution.characterization_sign,
                "iterations": solution.iterations,
                "final_residual": solution.residual_history[-1] if solution.residual_history else 0.0,
            },
        ),
    ]
    return written


def save_leader_solution(out_dir: str, solution) -> List[str]:
    os.makedirs(out_dir, exist_ok=True)
    grid = solution.leader.grid
    dual = solution.dual_optimum
    written = [
        write_trace(os.path.join(out_dir, "leader.trace"), solution.leader),
        write_trace(os.path.join(out_dir, "follower.trace"), solution.follower),
        write_slice(os.path.join(out_dir, "dual_f0.slice"), dual.f0, grid),
        write_slice(os.path.join(out_dir, "dual_f1.slice"), dual.f1, grid),
        write_report(
            os.path.join(out_dir, "report.csv"),
            {
                "theta": solution.theta_value,
                "leader_cost": solution.leader_cost,
                "duality_gap": solution.duality_gap,
                "terminal_position_error": solution.terminal_position_error,
                "terminal_velocity_error": solution.terminal_velocity_error,
                "physical_position_error": solution.physical_position_error,
                "admissible": solution.admissible,
                "position_admissible": solution.position_admissible,
                "iterations": solution.iterations,
                "threshold": solution.threshold,
                "below_threshold": solution.below_threshold,
            },
        ),
    ]
    return written
