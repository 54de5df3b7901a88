"""Dense brute-force ground truth for small grids.

Every linear map is assembled column by column from unit-impulse solves and
every answer is then plain dense linear algebra.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import logging
import os
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import scipy.linalg

from .discretization import (
    BoundaryTrace,
    Grid,
    assemble_step_operators,
    Direction,
    space_time_weights,
    stiffness_matrix,
    terminal_pair,
    trace_weights,
)
from .follower import FollowerProblem
from .geometry import BoundaryProfile, Side
from .leader import LeaderProblem, apply_A
from .runtime import run_ordered
from .wave_solver import boundary_traces, march_forward

logger = logging.getLogger(__name__)

MAX_DOFS = 10_000


class OracleSizeError(RuntimeError):
    pass


@dataclass(eq=False)
class DenseMaps:
    """Dense control-to-state maps and the quadrature/Riesz matrices of one side.

    control_to_trajectory maps a trace (Nt+1) to the flattened field
    ((Nt+1)*(Ny+1)); control_to_terminal maps it to the interior terminal pair
    stacked as [position; velocity]. The quadratures are stored as the
    diagonals of their matrices.
    """

    grid: Grid
    profile: BoundaryProfile
    side: Side
    control_to_trajectory: np.ndarray
    control_to_terminal: np.ndarray
    trace_quadrature: np.ndarray
    field_quadrature: np.ndarray
    h10_gram: np.ndarray


@dataclass(eq=False)
class DenseA:
    """A in Euclidean coordinates (rows [h_t(T); -h(T)] on interior nodes) and its metric transpose."""

    matrix: np.ndarray
    transpose: np.ndarray


def _impulse_column(args) -> np.ndarray:
    grid, profile, side, k = args
    ops = assemble_step_operators(profile, grid, Direction.FORWARD_L)
    trace = np.zeros(grid.Nt + 1)
    trace[k] = 1.0
    left, right = boundary_traces(side, trace, grid)
    zeros = np.zeros(grid.Ny + 1)
    return march_forward(ops, zeros, zeros, left, right)


def _terminal_rows(trajectories: np.ndarray, grid: Grid) -> np.ndarray:
    """[position; velocity] interior rows for a stack of trajectories (k, Nt+1, Ny+1)."""
    pair = terminal_pair(np.moveaxis(trajectories, 0, -1), grid)
    return np.vstack([pair.position[1:-1], pair.velocity[1:-1]])


def assemble_dense_maps(grid: Grid, profile: BoundaryProfile, side: Side, jobs: int = 1) -> DenseMaps:
    if grid.Ny * grid.Nt > MAX_DOFS:
        raise OracleSizeError(
            f"dense assembly limited to Ny*Nt <= {MAX_DOFS}, got {grid.Ny}*{grid.Nt}={grid.Ny * grid.Nt}"
        )
    side = Side(side)
    items = [(grid, profile, side, k) for k in range(grid.Nt + 1)]
    columns = np.stack(run_ordered(_impulse_column, items, jobs=jobs))
    trajectory = columns.reshape(grid.Nt + 1, -1).T
    h10 = stiffness_matrix(grid)
    logger.debug("assembled dense maps for %s on Ny=%d Nt=%d", side.value, grid.Ny, grid.Nt)
    return DenseMaps(
        grid=grid,
        profile=profile,
        side=side,
        control_to_trajectory=trajectory,
        control_to_terminal=_terminal_rows(columns, grid),
        trace_quadrature=trace_weights(grid),
        field_quadrature=space_time_weights(grid, profile).ravel(),
        h10_gram=h10,
    )


def _free_trajectory(problem: FollowerProblem) -> np.ndarray:
    ops = assemble_step_operators(problem.profile, problem.grid, Direction.FORWARD_L)
    left, right = boundary_traces(problem.side, problem.leader, problem.grid)
    return march_forward(ops, problem.z0, problem.z1, left, right)


def _normal_matrix(penalty: float, maps: DenseMaps) -> np.ndarray:
    b = maps.control_to_trajectory
    return penalty * np.diag(maps.trace_quadrature) + b.T @ (maps.field_quadrature[:, None] * b)


def follower_qp_oracle(problem: FollowerProblem, maps: DenseMaps) -> BoundaryTrace:
    """Follower from the normal equations (penalty Q + B^T W B) v = B^T W (z2 - z_leader)."""
    b = maps.control_to_trajectory
    misfit = (problem.tracking_target - _free_trajectory(problem)).ravel()
    rhs = b.T @ (maps.field_quadrature * misfit)
    factor = scipy.linalg.cho_factor(_normal_matrix(problem.penalty, maps))
    return BoundaryTrace(problem.grid, problem.side, scipy.linalg.cho_solve(factor, rhs))


def _metric_transpose(matrix: np.ndarray, maps: DenseMaps) -> np.ndarray:
    q = maps.trace_quadrature
    return (matrix.T / q[:, None]) * maps.grid.dy


def dense_A(problem: LeaderProblem, maps: DenseMaps, tol: float = 1e-12) -> DenseA:
    grid = problem.grid
    columns = []
    for k in range(grid.Nt + 1):
        impulse = np.zeros(grid.Nt + 1)
        impulse[k] = 1.0
        response = apply_A(impulse, problem, tol=tol)
        columns.append(np.concatenate([response.velocity[1:-1], response.minus_position[1:-1]]))
    matrix = np.column_stack(columns)
    return DenseA(matrix=matrix, transpose=_metric_transpose(matrix, maps))


def _velocity_minus_position(maps: DenseMaps) -> np.ndarray:
    m = maps.grid.interior
    terminal = maps.control_to_terminal
    return np.vstack([terminal[m:], -terminal[:m]])


def coupled_terminal_map(problem: LeaderProblem, maps: DenseMaps) -> DenseA:
    """A = T B (I - N^{-1} B^T W B) from the dense maps alone."""
    b = maps.control_to_trajectory
    hessian = b.T @ (maps.field_quadrature[:, None] * b)
    normal = _normal_matrix(problem.follower_template.penalty, maps)
    closed_loop = np.eye(problem.grid.Nt + 1) - scipy.linalg.solve(normal, hessian, assume_a="pos")
    matrix = _velocity_minus_position(maps) @ closed_loop
    return DenseA(matrix=matrix, transpose=_metric_transpose(matrix, maps))


def decoupled_terminal_map(maps: DenseMaps) -> np.ndarray:
    """Terminal map without follower feedback, in the row layout of DenseA."""
    return _velocity_minus_position(maps)


def dense_background_terminal(problem: LeaderProblem, maps: DenseMaps):
    """(nu0(T), nu0_t(T)) of the uncontrolled coupled system, from the QP oracle."""
    template = problem.follower_template
    follower = follower_qp_oracle(template, maps).values
    grid = problem.grid
    state = _free_trajectory(template) + (maps.control_to_trajectory @ follower).reshape(grid.field_shape)
    pair = terminal_pair(state, grid)
    return pair.position, pair.velocity


def _block_dual_norm(g: np.ndarray, gram: np.ndarray) -> float:
    return float(np.sqrt(max(g @ scipy.linalg.solve(gram, g, assume_a="pos"), 0.0)))


def dense_dual_solve(problem: LeaderProblem, maps: DenseMaps, radius: Optional[float] = None) -> np.ndarray:
    """Minimize Theta over interior coefficients by enumerating which blocks vanish.

    For each pattern the nonzero blocks are found by damped Newton on the
    smooth restricted objective; a pattern is accepted when the zero blocks
    satisfy their subgradient condition. Returns x = (f0, f1) interior.
    """
    grid = problem.grid
    m = grid.interior
    radius = problem.effective_epsilon if radius is None else radius
    a = coupled_terminal_map(problem, maps).matrix
    q = maps.trace_quadrature
    gram = grid.dy**2 * (a / q) @ a.T
    gram = 0.5 * (gram + gram.T)

    position, velocity = dense_background_terminal(problem, maps)
    velocity_gap = (problem.v1 - velocity)[1:-1]
    position_gap = (problem.v0 - position)[1:-1]
    linear = grid.dy * np.concatenate([-velocity_gap, position_gap])
    metrics = (maps.h10_gram, grid.dy * np.eye(m))
    blocks = (slice(0, m), slice(m, 2 * m))

    def block_norm(x, b):
        xb = x[blocks[b]]
        return float(np.sqrt(max(xb @ metrics[b] @ xb, 0.0)))

    def value(x):
        return 0.5 * x @ gram @ x + linear @ x + radius * (block_norm(x, 0) + block_norm(x, 1))

    best: Optional[np.ndarray] = None
    best_value = np.inf
    for pattern in itertools.product((False, True), repeat=2):
        active = [b for b in range(2) if pattern[b]]
        x = np.zeros(2 * m)
        for b in active:
            start = -scipy.linalg.solve(metrics[b], linear[blocks[b]], assume_a="pos")
            x[blocks[b]] = start if np.any(start) else 1.0
        index = np.concatenate([np.arange(2 * m)[blocks[b]] for b in active]) if active else np.array([], int)
        for _ in range(200):
            if not active:
                break
            grad = gram @ x + linear
            hess = gram.copy()
            for b in active:
                sl = blocks[b]
                size = block_norm(x, b)
                rx = metrics[b] @ x[sl]
                grad[sl] += radius * rx / size
                hess[sl, sl] += radius * (metrics[b] / size - np.outer(rx, rx) / size**3)
            g = grad[index]
            step = -np.linalg.lstsq(hess[np.ix_(index, index)], g, rcond=None)[0]
            decrement = -float(g @ step)
            if decrement <= 1e-30:
                break
            t = 1.0
            base = value(x)
            while t > 1e-12:
                trial = x.copy()
                trial[index] += t * step
                if all(block_norm(trial, b) > 0 for b in active) and value(trial) <= base - 1e-4 * t * decrement:
                    break
                t *= 0.5
            else:
                break
            x = trial
        if any(block_norm(x, b) == 0.0 for b in active):
            continue
        grad = gram @ x + linear
        inactive_ok = all(
            _block_dual_norm(grad[blocks[b]], metrics[b]) <= radius * (1.0 + 1e-8)
            for b in range(2)
            if b not in active
        )
        if not inactive_ok:
            continue
        candidate = value(x)
        if candidate < best_value:
            best, best_value = x, candidate
    if best is None:
        raise RuntimeError("no block pattern satisfied the optimality conditions")
    return best


def fd_gradient(functional: Callable[[np.ndarray], float], point: Sequence[float], h: float = 1e-5) -> np.ndarray:
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.asarray(point, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        grad.flat[i] = (functional(x + e) - functional(x - e)) / (2.0 * h)
    return grad


def instance_hash(*parts) -> str:
    text = "|".join(repr(p) for p in parts)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class OracleRecord:
    test_id: str
    instance: str
    discrepancy: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.discrepancy) and self.discrepancy <= self.tolerance)


REPORT_HEADER = ["test_id", "instance_hash", "discrepancy", "tolerance", "passed"]


def append_oracle_report(path: str, records: Iterable[OracleRecord]) -> None:
    new_file = not os.path.exists(path)
    with open(path, "a", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        if new_file:
            writer.writerow(REPORT_HEADER)
        for r in records:
            writer.writerow([r.test_id, r.instance, f"{r.discrepancy:.17g}", f"{r.tolerance:.17g}", str(r.passed).lower()])
