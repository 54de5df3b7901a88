"""Forward and backward solves on the cylinder and the exact transpose of the forward map."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .discretization import (
    BoundaryTrace,
    Direction,
    Field,
    Grid,
    ShapeError,
    StatePair,
    StepOperators,
    assemble_step_operators,
    terminal_pair,
)
from .geometry import BoundaryProfile, Side

logger = logging.getLogger(__name__)


class SolverDivergenceError(RuntimeError):
    def __init__(self, level: int):
        super().__init__(f"non-finite values at time level {level}")
        self.level = level


@dataclass(eq=False)
class ForwardProblem:
    """z_tt + Lz = source, z = left on Gamma_0, z = right on Gamma_alpha."""

    grid: Grid
    profile: BoundaryProfile
    z0: np.ndarray
    z1: np.ndarray
    left: np.ndarray
    right: np.ndarray
    source: Optional[np.ndarray] = None


@dataclass(eq=False)
class BackwardProblem:
    """p_tt + L*p = source, p = 0 on the boundary, p(T) = p_t(T) = 0."""

    grid: Grid
    profile: BoundaryProfile
    source: np.ndarray


def boundary_traces(side: Side, values: np.ndarray, grid: Grid) -> Tuple[np.ndarray, np.ndarray]:
    """(left, right) boundary data with `values` on `side` and zero on the other end."""
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.Nt + 1,):
        raise ShapeError(f"trace must have length {grid.Nt + 1}")
    zeros = np.zeros(grid.Nt + 1)
    return (values, zeros) if side is Side.GAMMA_0 else (zeros, values)


def _check_slice(name: str, values, grid: Grid) -> np.ndarray:
    arr = np.zeros(grid.Ny + 1) if values is None else np.asarray(values, dtype=float)
    if arr.shape != (grid.Ny + 1,):
        raise ShapeError(f"{name} must have length {grid.Ny + 1}, got {arr.shape}")
    return arr


def march_forward(
    ops: StepOperators,
    z0: np.ndarray,
    z1: np.ndarray,
    left: np.ndarray,
    right: np.ndarray,
    source: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Trajectory array of shape (Nt+1, Ny+1) for prepared forward operators."""
    grid = ops.grid
    z = np.zeros(grid.field_shape)
    src = np.zeros(grid.field_shape) if source is None else source

    z[0] = z0
    z[0, 0], z[0, -1] = left[0], right[0]
    start = ops.start
    z[1, 1:-1] = start.current @ z[0] + start.velocity @ z1 + start.source_scale * src[0, 1:-1]
    z[1, 0], z[1, -1] = left[1], right[1]
    for n in (0, 1):
        if not np.all(np.isfinite(z[n])):
            raise SolverDivergenceError(n)

    for step in ops.steps:
        n = step.level
        z[n + 1, 1:-1] = step.apply(z[n], z[n - 1], np.array([left[n + 1], right[n + 1]]), src[n, 1:-1])
        z[n + 1, 0], z[n + 1, -1] = left[n + 1], right[n + 1]
        if not np.all(np.isfinite(z[n + 1])):
            raise SolverDivergenceError(n + 1)
    return z


def solve_forward(problem: ForwardProblem) -> Tuple[Field, StatePair]:
    grid = problem.grid
    z0 = _check_slice("z0", problem.z0, grid)
    z1 = _check_slice("z1", problem.z1, grid)
    left = np.asarray(problem.left, dtype=float)
    right = np.asarray(problem.right, dtype=float)
    if left.shape != (grid.Nt + 1,) or right.shape != (grid.Nt + 1,):
        raise ShapeError(f"boundary data must have length {grid.Nt + 1}")
    source = problem.source
    if source is not None:
        source = np.asarray(source, dtype=float)
        if source.shape != grid.field_shape:
            raise ShapeError(f"source must have shape {grid.field_shape}")
    ops = assemble_step_operators(problem.profile, grid, Direction.FORWARD_L)
    values = march_forward(ops, z0, z1, left, right, source)
    return Field(grid, values), terminal_pair(values, grid)


def march_backward(ops: StepOperators, source: np.ndarray) -> np.ndarray:
    grid = ops.grid
    p = np.zeros(grid.field_shape)
    # p(T) = p_t(T) = 0 leaves only the source in the Taylor start
    p[-2, 1:-1] = 0.5 * grid.dt**2 * source[-1, 1:-1]
    zero_bnd = np.zeros(2)
    for step in ops.steps:
        n = step.level
        p[n - 1, 1:-1] = step.apply(p[n], p[n + 1], zero_bnd, source[n, 1:-1])
        if not np.all(np.isfinite(p[n - 1])):
            raise SolverDivergenceError(n - 1)
    return p


def solve_backward(problem: BackwardProblem) -> Field:
    grid = problem.grid
    source = np.asarray(problem.source, dtype=float)
    if source.shape != grid.field_shape:
        raise ShapeError(f"source must have shape {grid.field_shape}")
    ops = assemble_step_operators(problem.profile, grid, Direction.BACKWARD_LSTAR)
    return Field(grid, march_backward(ops, source))


def fold_terminal_cotangent(cotangent: np.ndarray, terminal: StatePair, grid: Grid) -> None:
    """Add the transpose of the terminal extraction into a trajectory cotangent, in place."""
    position = np.asarray(terminal.position, dtype=float)
    velocity = np.asarray(terminal.velocity, dtype=float)
    cotangent[-1] += position + 3.0 * velocity / (2.0 * grid.dt)
    cotangent[-2] += -2.0 * velocity / grid.dt
    cotangent[-3] += velocity / (2.0 * grid.dt)


def reverse_sweep(ops: StepOperators, cotangent: np.ndarray):
    """Transpose of `march_forward` applied to a trajectory cotangent.

    Returns (boundary_bar, z0_bar, z1_bar) where boundary_bar has shape
    (Nt+1, 2) holding the left and right trace components. The cotangent
    array is consumed.
    """
    grid = ops.grid
    g = cotangent
    boundary_bar = np.zeros((grid.Nt + 1, 2))

    for step in reversed(ops.steps):
        n = step.level
        now_bar, lag_bar, bnd_bar, _ = step.apply_transpose(g[n + 1, 1:-1])
        g[n] += now_bar
        g[n - 1] += lag_bar
        boundary_bar[n + 1] += bnd_bar
        boundary_bar[n + 1, 0] += g[n + 1, 0]
        boundary_bar[n + 1, 1] += g[n + 1, -1]

    start = ops.start
    r = g[1, 1:-1]
    g[0] += start.current.T @ r
    z1_bar = start.velocity.T @ r
    boundary_bar[1, 0] += g[1, 0]
    boundary_bar[1, 1] += g[1, -1]
    boundary_bar[0, 0] += g[0, 0]
    boundary_bar[0, 1] += g[0, -1]
    z0_bar = g[0].copy()
    z0_bar[0] = z0_bar[-1] = 0.0
    return boundary_bar, z0_bar, z1_bar


def apply_transposed_forward(
    side: Side,
    grid: Grid,
    profile: BoundaryProfile,
    terminal: Optional[StatePair] = None,
    trajectory: Optional[np.ndarray] = None,
) -> BoundaryTrace:
    """Euclidean transpose of the control-to-state map on `side`.

    For a control f (zero initial data, zero other side) with trajectory Z(f)
    and terminal pair P(f): <Z(f), trajectory> + <P(f), terminal> equals
    <f, result> with plain dot products.
    """
    cotangent = np.zeros(grid.field_shape)
    if trajectory is not None:
        trajectory = np.asarray(trajectory, dtype=float)
        if trajectory.shape != grid.field_shape:
            raise ShapeError(f"trajectory cotangent must have shape {grid.field_shape}")
        cotangent += trajectory
    if terminal is not None:
        if np.shape(terminal.position) != (grid.Ny + 1,) or np.shape(terminal.velocity) != (grid.Ny + 1,):
            raise ShapeError(f"terminal cotangent slices must have length {grid.Ny + 1}")
        fold_terminal_cotangent(cotangent, terminal, grid)
    ops = assemble_step_operators(profile, grid, Direction.FORWARD_L)
    boundary_bar, _, _ = reverse_sweep(ops, cotangent)
    column = 0 if side is Side.GAMMA_0 else 1
    return BoundaryTrace(grid, side, boundary_bar[:, column])
