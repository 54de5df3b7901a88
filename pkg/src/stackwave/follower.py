"""The follower's tracking problem for a fixed leader control.

The follower minimizes

    1/2 sum_Q alpha(t) |z - z2|^2 + penalty/2 |v|^2_Gamma

over boundary traces v on the same side as the leader. Everything here is
the exact discrete quadratic: gradients come from the transposed forward
map, and the closed-form p_y characterization is only reported as a
residual.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .discretization import (
    BoundaryTrace,
    Direction,
    Field,
    Grid,
    ShapeError,
    StatePair,
    assemble_step_operators,
    normal_derivative_trace,
    space_time_weights,
    trace_norm,
    trace_weights,
)
from .geometry import BoundaryProfile, Side, coefficients, eval_profile
from .runtime import raise_if_cancelled
from .wave_solver import (
    BackwardProblem,
    SolverDivergenceError,
    boundary_traces,
    fold_terminal_cotangent,
    march_forward,
    reverse_sweep,
    solve_backward,
)

logger = logging.getLogger(__name__)


class FollowerIterationError(RuntimeError):
    def __init__(self, message: str, history: List[float]):
        super().__init__(message)
        self.history = list(history)


class FollowerConvergenceError(RuntimeError):
    def __init__(self, message: str, history: List[float]):
        super().__init__(message + "; try a larger penalty")
        self.history = list(history)


@dataclass(frozen=True)
class FollowerSettings:
    tol: float = 1e-10
    max_iter: int = 500
    fixed_point_tol: float = 1e-10
    fixed_point_max_iter: int = 200


def _trace_values(trace, grid: Grid, name: str) -> np.ndarray:
    if trace is None:
        return np.zeros(grid.Nt + 1)
    values = trace.values if isinstance(trace, BoundaryTrace) else np.asarray(trace, dtype=float)
    if values.shape != (grid.Nt + 1,):
        raise ShapeError(f"{name} must have length {grid.Nt + 1}, got {values.shape}")
    return values


@dataclass(eq=False)
class FollowerProblem:
    grid: Grid
    profile: BoundaryProfile
    side: Side = Side.GAMMA_0
    leader: Optional[np.ndarray] = None
    penalty: float = 100.0
    tracking_target: Optional[np.ndarray] = None
    z0: Optional[np.ndarray] = None
    z1: Optional[np.ndarray] = None
    settings: FollowerSettings = field(default_factory=FollowerSettings)

    def __post_init__(self):
        if not self.penalty > 0:
            raise ValueError("penalty must be positive")
        grid = self.grid
        self.side = Side(self.side)
        self.leader = _trace_values(self.leader, grid, "leader")
        target = self.tracking_target
        if isinstance(target, Field):
            target = target.values
        target = np.zeros(grid.field_shape) if target is None else np.asarray(target, dtype=float)
        if target.shape != grid.field_shape:
            raise ShapeError(f"tracking target must have shape {grid.field_shape}, got {target.shape}")
        self.tracking_target = target
        for name in ("z0", "z1"):
            values = getattr(self, name)
            values = np.zeros(grid.Ny + 1) if values is None else np.asarray(values, dtype=float)
            if values.shape != (grid.Ny + 1,):
                raise ShapeError(f"{name} must have length {grid.Ny + 1}")
            setattr(self, name, values)

    def with_leader(self, leader) -> "FollowerProblem":
        return replace(self, leader=_trace_values(leader, self.grid, "leader"))


class ControlMap:
    """Control-to-state map B on one side, its exact transpose and the quadratures."""

    def __init__(self, grid: Grid, profile: BoundaryProfile, side: Side):
        self.grid = grid
        self.profile = profile
        self.side = Side(side)
        self.ops = assemble_step_operators(profile, grid, Direction.FORWARD_L)
        self.weights = space_time_weights(grid, profile)
        self.q = trace_weights(grid)
        self._column = 0 if self.side is Side.GAMMA_0 else 1

    @classmethod
    def for_problem(cls, problem: FollowerProblem) -> "ControlMap":
        return cls(problem.grid, problem.profile, problem.side)

    def response(self, trace: np.ndarray, z0=None, z1=None) -> np.ndarray:
        grid = self.grid
        left, right = boundary_traces(self.side, trace, grid)
        z0 = np.zeros(grid.Ny + 1) if z0 is None else z0
        z1 = np.zeros(grid.Ny + 1) if z1 is None else z1
        return march_forward(self.ops, z0, z1, left, right)

    def transpose(self, trajectory: Optional[np.ndarray] = None, terminal: Optional[StatePair] = None) -> np.ndarray:
        cotangent = np.zeros(self.grid.field_shape) if trajectory is None else np.array(trajectory, dtype=float)
        if terminal is not None:
            fold_terminal_cotangent(cotangent, terminal, self.grid)
        boundary_bar, _, _ = reverse_sweep(self.ops, cotangent)
        return boundary_bar[:, self._column]

    def feedback(self, misfit: np.ndarray) -> np.ndarray:
        """-Q^{-1} B^T W misfit: the discrete (beta/alpha) d_nu p on the actuated side."""
        return -self.transpose(self.weights * misfit) / self.q

    def gauss_newton(self, v: np.ndarray) -> np.ndarray:
        """B^T W B v (Euclidean)."""
        return self.transpose(self.weights * self.response(v))


@dataclass(eq=False)
class FollowerSolution:
    follower: BoundaryTrace
    state: Field
    adjoint: Field
    cost: float
    characterization_residual: float
    characterization_sign: float
    iterations: int
    residual_history: List[float]


@dataclass(eq=False)
class CoupledSolution:
    """Converged pair (z, p) of the optimality system and the follower it implies."""

    state: Field
    adjoint: Field
    follower: BoundaryTrace
    iterations: int
    history: List[float]


def _state(problem: FollowerProblem, cmap: ControlMap, candidate: np.ndarray) -> np.ndarray:
    return cmap.response(problem.leader + candidate, problem.z0, problem.z1)


def _cost(problem: FollowerProblem, cmap: ControlMap, candidate: np.ndarray, state: np.ndarray) -> float:
    misfit = state - problem.tracking_target
    tracking = 0.5 * float(np.sum(cmap.weights * misfit**2))
    return tracking + 0.5 * problem.penalty * float(np.sum(cmap.q * candidate**2))


def follower_cost(problem: FollowerProblem, candidate) -> float:
    cmap = ControlMap.for_problem(problem)
    v = _trace_values(candidate, problem.grid, "candidate")
    return _cost(problem, cmap, v, _state(problem, cmap, v))


def follower_gradient(problem: FollowerProblem, candidate) -> BoundaryTrace:
    """Riesz representative (in the trace L2 product) of the derivative of follower_cost."""
    cmap = ControlMap.for_problem(problem)
    v = _trace_values(candidate, problem.grid, "candidate")
    state = _state(problem, cmap, v)
    grad = problem.penalty * v - cmap.feedback(state - problem.tracking_target)
    return BoundaryTrace(problem.grid, problem.side, grad)


def boundary_adjoint_coefficient(problem: FollowerProblem) -> np.ndarray:
    """Signed coefficient c(t) with follower = c(t) * p_y / penalty at the optimum.

    Outward normal on each side: -1/alpha^2 on Gamma_0, (1 - alpha'^2)/alpha^2
    on Gamma_alpha.
    """
    times = problem.grid.times
    alpha, _, _ = eval_profile(problem.profile, times)
    if problem.side is Side.GAMMA_0:
        return -np.ones_like(times) / np.broadcast_to(alpha, times.shape) ** 2
    beta, _, _ = coefficients(problem.profile, 1.0, times)
    return np.broadcast_to(beta / alpha, times.shape).copy()


def _adjoint_field(problem: FollowerProblem, state: np.ndarray) -> Field:
    alpha, _, _ = eval_profile(problem.profile, problem.grid.times)
    alpha = np.broadcast_to(alpha, problem.grid.times.shape)
    source = alpha[:, None] * (state - problem.tracking_target)
    return solve_backward(BackwardProblem(problem.grid, problem.profile, source))


def characterization_residual(problem: FollowerProblem, follower: np.ndarray, adjoint: Field):
    """Relative trace distance between the follower and c(t) p_y / penalty; returns (residual, sign)."""
    grid = problem.grid
    p_y = normal_derivative_trace(adjoint, problem.side, grid).values
    predicted = boundary_adjoint_coefficient(problem) * p_y / problem.penalty
    diff = trace_norm(follower - predicted, grid)
    ref = trace_norm(follower, grid)
    sign = -1.0 if problem.side is Side.GAMMA_0 else 1.0
    if ref == 0.0:
        return diff, sign
    return diff / ref, sign


def solve_follower(problem: FollowerProblem, initial_guess=None) -> FollowerSolution:
    """Conjugate gradients on (penalty Q + B^T W B) v = B^T W (z2 - z_leader), Q-preconditioned."""
    grid = problem.grid
    settings = problem.settings
    cmap = ControlMap.for_problem(problem)
    q = cmap.q

    free = cmap.response(problem.leader, problem.z0, problem.z1)
    rhs = cmap.transpose(cmap.weights * (problem.tracking_target - free))

    def normal(v: np.ndarray) -> np.ndarray:
        return problem.penalty * q * v + cmap.gauss_newton(v)

    x = np.zeros(grid.Nt + 1) if initial_guess is None else _trace_values(initial_guess, grid, "initial guess").copy()
    history: List[float] = []
    ref = float(np.sqrt(rhs @ (rhs / q)))
    iterations = 0
    if ref > 0.0:
        r = rhs - normal(x)
        z = r / q
        p = z.copy()
        rz = float(r @ z)
        for iterations in range(settings.max_iter + 1):
            raise_if_cancelled()
            resid = float(np.sqrt(max(rz, 0.0)))
            history.append(resid)
            logger.debug("follower cg iter %d residual %.3e", iterations, resid)
            if resid <= settings.tol * ref:
                break
            if iterations == settings.max_iter:
                raise FollowerIterationError(
                    f"follower CG did not converge in {settings.max_iter} iterations", history
                )
            ap = normal(p)
            step = rz / float(p @ ap)
            x += step * p
            r -= step * ap
            z = r / q
            rz_new = float(r @ z)
            p = z + (rz_new / rz) * p
            rz = rz_new
    else:
        x[:] = 0.0
        history.append(0.0)

    state = _state(problem, cmap, x)
    cost = _cost(problem, cmap, x, state)
    adjoint = _adjoint_field(problem, state)
    residual, sign = characterization_residual(problem, x, adjoint)
    logger.info(
        "follower solved on %s: cost=%.6e, %d CG iterations, characterization residual %.3e",
        problem.side.value, cost, iterations, residual,
    )
    return FollowerSolution(
        follower=BoundaryTrace(grid, problem.side, x),
        state=Field(grid, state),
        adjoint=adjoint,
        cost=cost,
        characterization_residual=residual,
        characterization_sign=sign,
        iterations=iterations,
        residual_history=history,
    )


def coupled_fixed_point(
    cmap: ControlMap,
    leader: np.ndarray,
    penalty: float,
    target: np.ndarray,
    z0=None,
    z1=None,
    tol: float = 1e-10,
    max_iter: int = 200,
):
    """Iterate v <- feedback(z(leader + v) - target) / penalty; returns (v, z, iterations, history)."""
    grid = cmap.grid
    v = np.zeros(grid.Nt + 1)
    history: List[float] = []
    first: Optional[float] = None
    for k in range(1, max_iter + 1):
        raise_if_cancelled()
        try:
            state = cmap.response(leader + v, z0, z1)
        except SolverDivergenceError as exc:
            raise FollowerConvergenceError("optimality system iterates diverged", history) from exc
        v_new = cmap.feedback(state - target) / penalty
        delta = trace_norm(v_new - v, grid)
        history.append(delta)
        v = v_new
        if not np.isfinite(delta) or (first is not None and delta > 1e3 * first):
            raise FollowerConvergenceError(f"optimality system is not contractive at penalty {penalty}", history)
        if delta == 0.0 or delta <= tol * trace_norm(v, grid):
            return v, cmap.response(leader + v, z0, z1), k, history
        if first is None and delta > 0.0:
            first = delta
    raise FollowerConvergenceError(f"optimality system did not converge in {max_iter} iterations", history)


def solve_optimality_system(problem: FollowerProblem) -> CoupledSolution:
    cmap = ControlMap.for_problem(problem)
    settings = problem.settings
    v, state, iterations, history = coupled_fixed_point(
        cmap,
        problem.leader,
        problem.penalty,
        problem.tracking_target,
        problem.z0,
        problem.z1,
        tol=settings.fixed_point_tol,
        max_iter=settings.fixed_point_max_iter,
    )
    logger.debug("optimality system converged in %d iterations", iterations)
    return CoupledSolution(
        state=Field(problem.grid, state),
        adjoint=_adjoint_field(problem, state),
        follower=BoundaryTrace(problem.grid, problem.side, v),
        iterations=iterations,
        history=history,
    )
