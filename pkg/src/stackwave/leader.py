"""The leader's minimal-norm approximate-controllability problem, solved through its dual.

The leader control f drives the terminal pair of the coupled state-follower
system into an epsilon neighbourhood of (v0, v1). The dual variable
xi = (f0, f1) lives in H^1_0 x L^2 on interior nodes; the leader is recovered
as f = A* xi at the minimizer of

    Theta(xi) = 1/2 |A* xi|^2_Gamma + (v0 - nu0(T), f1) - <v1 - nu0_t(T), f0>
                + eps |f0|_{H^1_0} + eps |f1|_{L^2}.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg

from .discretization import (
    BoundaryTrace,
    Field,
    Grid,
    NormKind,
    ShapeError,
    StatePair,
    norm,
    solve_dirichlet,
    stiffness_matrix,
    terminal_pair,
    trace_norm,
)
from .follower import (
    ControlMap,
    FollowerConvergenceError,
    FollowerProblem,
    FollowerSolution,
    coupled_fixed_point,
    solve_follower,
    solve_optimality_system,
)
from .geometry import Side, eval_profile, threshold_for_side
from .runtime import raise_if_cancelled
from .wave_solver import SolverDivergenceError

logger = logging.getLogger(__name__)


class ControlTimeWarning(UserWarning):
    pass


class LeaderIterationError(RuntimeError):
    def __init__(self, message: str, history: List[float], dual: "DualVariable"):
        super().__init__(message)
        self.history = list(history)
        self.dual = dual


@dataclass(frozen=True)
class LeaderSettings:
    tol: float = 1e-8
    max_iter: int = 2000
    newton_every: int = 25
    newton_steps: int = 30
    power_iterations: int = 200


def _slice(values, grid: Grid, name: str) -> np.ndarray:
    arr = np.zeros(grid.Ny + 1) if values is None else np.asarray(values, dtype=float)
    if arr.shape != (grid.Ny + 1,):
        raise ShapeError(f"{name} must have length {grid.Ny + 1}, got {arr.shape}")
    return arr


@dataclass(eq=False)
class LeaderProblem:
    follower_template: FollowerProblem
    v0: Optional[np.ndarray] = None
    v1: Optional[np.ndarray] = None
    epsilon: float = 1e-2
    margin: float = 1e-3
    settings: LeaderSettings = field(default_factory=LeaderSettings)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 <= self.margin < 1.0:
            raise ValueError("margin must lie in [0, 1)")
        grid = self.grid
        self.v0 = _slice(self.v0, grid, "v0")
        self.v1 = _slice(self.v1, grid, "v1")
        self.follower_template = self.follower_template.with_leader(None)

    @property
    def grid(self) -> Grid:
        return self.follower_template.grid

    @property
    def side(self) -> Side:
        return self.follower_template.side

    @property
    def effective_epsilon(self) -> float:
        return self.epsilon * (1.0 - self.margin)


@dataclass(eq=False)
class DualVariable:
    """(f0, f1) as full slices with zero boundary entries."""

    grid: Grid
    f0: np.ndarray
    f1: np.ndarray
    iterations: int = 0
    residual_history: List[float] = field(default_factory=list)
    theta_history: List[float] = field(default_factory=list)

    def __post_init__(self):
        self.f0 = _slice(self.f0, self.grid, "f0").copy()
        self.f1 = _slice(self.f1, self.grid, "f1").copy()
        if self.f0[0] != 0.0 or self.f0[-1] != 0.0:
            raise ShapeError("f0 must vanish at both boundary nodes")
        self.f1[0] = self.f1[-1] = 0.0

    @classmethod
    def zeros(cls, grid: Grid) -> "DualVariable":
        return cls(grid, np.zeros(grid.Ny + 1), np.zeros(grid.Ny + 1))

    @classmethod
    def from_vector(cls, grid: Grid, x: np.ndarray, **kwargs) -> "DualVariable":
        m = grid.interior
        f0 = np.zeros(grid.Ny + 1)
        f1 = np.zeros(grid.Ny + 1)
        f0[1:-1] = x[:m]
        f1[1:-1] = x[m:]
        return cls(grid, f0, f1, **kwargs)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.f0[1:-1], self.f1[1:-1]])


@dataclass(eq=False)
class TerminalResponse:
    """A f = (h_t(T), -h(T)) on interior nodes; boundary entries are zero."""

    velocity: np.ndarray
    minus_position: np.ndarray


@dataclass(eq=False)
class Background:
    """The uncontrolled coupled pair (nu0, p0) and its terminal slices."""

    state: Field
    adjoint: Field
    follower: BoundaryTrace
    terminal: StatePair


@dataclass(eq=False)
class LeaderSolution:
    leader: BoundaryTrace
    follower: BoundaryTrace
    dual_optimum: DualVariable
    theta_value: float
    leader_cost: float
    terminal_position_error: float
    terminal_velocity_error: float
    physical_position_error: float
    duality_gap: float
    iterations: int
    state: Field
    admissible: bool
    position_admissible: bool
    threshold: Optional[float]
    below_threshold: bool


def _interior(values: np.ndarray) -> np.ndarray:
    """Zero the boundary entries; the dual ball only constrains interior nodes."""
    out = np.array(values, dtype=float)
    out[0] = out[-1] = 0.0
    return out


def dual_pairing(response: TerminalResponse, xi: DualVariable, grid: Grid) -> float:
    """<<A f, xi>>: the H^-1 x H^1_0 pairing plus the L^2 product, both dy * dot on interior nodes."""
    return grid.dy * float(response.velocity @ xi.f0 + response.minus_position @ xi.f1)


def solve_background(problem: LeaderProblem) -> Background:
    solution = solve_optimality_system(problem.follower_template)
    return Background(
        state=solution.state,
        adjoint=solution.adjoint,
        follower=solution.follower,
        terminal=terminal_pair(solution.state.values, problem.grid),
    )


def _control_map(problem: LeaderProblem) -> ControlMap:
    return ControlMap.for_problem(problem.follower_template)


def apply_A(f, problem: LeaderProblem, tol: Optional[float] = None) -> TerminalResponse:
    grid = problem.grid
    template = problem.follower_template
    values = f.values if isinstance(f, BoundaryTrace) else np.asarray(f, dtype=float)
    if values.shape != (grid.Nt + 1,):
        raise ShapeError(f"leader trace must have length {grid.Nt + 1}")
    cmap = _control_map(problem)
    _, state, _, _ = coupled_fixed_point(
        cmap,
        values,
        template.penalty,
        np.zeros(grid.field_shape),
        tol=template.settings.fixed_point_tol if tol is None else tol,
        max_iter=template.settings.fixed_point_max_iter,
    )
    pair = terminal_pair(state, grid)
    return TerminalResponse(velocity=_interior(pair.velocity), minus_position=-_interior(pair.position))


def _adjoint_fixed_point(cmap: ControlMap, u: np.ndarray, penalty: float, tol: float, max_iter: int) -> np.ndarray:
    """Solve (penalty Q + B^T W B) x = u by x <- Q^{-1}(u - B^T W B x) / penalty."""
    grid = cmap.grid
    x = np.zeros(grid.Nt + 1)
    history: List[float] = []
    first: Optional[float] = None
    for _ in range(max_iter):
        raise_if_cancelled()
        try:
            x_new = (u - cmap.gauss_newton(x)) / (penalty * cmap.q)
        except SolverDivergenceError as exc:
            raise FollowerConvergenceError("adjoint coupled system iterates diverged", history) from exc
        delta = trace_norm(x_new - x, grid)
        history.append(delta)
        x = x_new
        if not np.isfinite(delta) or (first is not None and delta > 1e3 * first):
            raise FollowerConvergenceError(f"adjoint coupled system is not contractive at penalty {penalty}", history)
        if delta == 0.0 or delta <= tol * trace_norm(x, grid):
            return x
        if first is None and delta > 0.0:
            first = delta
    raise FollowerConvergenceError(f"adjoint coupled system did not converge in {max_iter} iterations", history)


def apply_Astar(xi: DualVariable, problem: LeaderProblem, tol: Optional[float] = None) -> BoundaryTrace:
    """Adjoint of apply_A in the trace L^2 product against the dual pairing."""
    grid = problem.grid
    template = problem.follower_template
    cmap = _control_map(problem)
    cot = StatePair(position=-grid.dy * xi.f1, velocity=grid.dy * xi.f0)
    u = cmap.transpose(terminal=cot)
    x = _adjoint_fixed_point(
        cmap,
        u,
        template.penalty,
        template.settings.fixed_point_tol if tol is None else tol,
        template.settings.fixed_point_max_iter,
    )
    # (penalty Q + H) x = u gives Q^{-1}(u - H x) = penalty x
    return BoundaryTrace(grid, problem.side, template.penalty * x)


def _targets(problem: LeaderProblem, background: Background) -> Tuple[np.ndarray, np.ndarray]:
    """(v1 - nu0_t(T), v0 - nu0(T)) on interior nodes."""
    velocity_gap = _interior(problem.v1 - background.terminal.velocity)
    position_gap = _interior(problem.v0 - background.terminal.position)
    return velocity_gap, position_gap


def theta_smooth(xi: DualVariable, problem: LeaderProblem, background: Background, tol: Optional[float] = None) -> float:
    """The quadratic and linear terms of Theta."""
    grid = problem.grid
    velocity_gap, position_gap = _targets(problem, background)
    trace = apply_Astar(xi, problem, tol=tol).values
    quadratic = 0.5 * trace_norm(trace, grid) ** 2
    return quadratic + grid.dy * float(position_gap @ xi.f1 - velocity_gap @ xi.f0)


def theta(xi: DualVariable, problem: LeaderProblem, background: Background, radius: Optional[float] = None) -> float:
    grid = problem.grid
    radius = problem.epsilon if radius is None else radius
    penalty = radius * (norm(xi.f0, NormKind.H10_OMEGA, grid) + norm(xi.f1, NormKind.L2_OMEGA, grid))
    return theta_smooth(xi, problem, background) + penalty


def theta_gradient(
    xi: DualVariable, problem: LeaderProblem, background: Background, tol: Optional[float] = None
) -> DualVariable:
    """Riesz representative in H^1_0 x L^2 of the derivative of the smooth part of Theta."""
    grid = problem.grid
    velocity_gap, position_gap = _targets(problem, background)
    response = apply_A(apply_Astar(xi, problem, tol=tol), problem, tol=tol)
    g0 = np.zeros(grid.Ny + 1)
    g0[1:-1] = solve_dirichlet(grid, (response.velocity - velocity_gap)[1:-1])
    g1 = response.minus_position + position_gap
    return DualVariable(grid, g0, g1)


class DualQuadratic:
    """Theta restricted to interior coefficients, assembled once as dense algebra.

    x = (f0 interior, f1 interior); smooth part 1/2 x^T G x + l^T x in
    Euclidean coordinates, metric R = blockdiag(dy K, dy I).

    Assembly applies A* to all 2(Ny-1) unit vectors, each a coupled fixed
    point, and keeps a dense (Nt+1) x 2(Ny-1) matrix. That is cheap next to
    the iterations on the grids the dual is solved on, but it grows as Ny^2 Nt.
    """

    def __init__(self, problem: LeaderProblem, background: Background, radius: float):
        grid = problem.grid
        m = grid.interior
        self.grid = grid
        self.radius = radius
        self.m = m
        columns = []
        for i in range(2 * m):
            e = np.zeros(2 * m)
            e[i] = 1.0
            columns.append(apply_Astar(DualVariable.from_vector(grid, e), problem).values)
        self.astar = np.column_stack(columns)
        q = _control_map(problem).q
        gram = self.astar.T @ (q[:, None] * self.astar)
        self.gram = 0.5 * (gram + gram.T)
        velocity_gap, position_gap = _targets(problem, background)
        self.linear = grid.dy * np.concatenate([-velocity_gap[1:-1], position_gap[1:-1]])
        self.r_blocks = (stiffness_matrix(grid), grid.dy * np.eye(m))
        self.metric = scipy.linalg.block_diag(*self.r_blocks)
        self._metric_factor = scipy.linalg.cho_factor(self.metric)

    def blocks(self):
        return (slice(0, self.m), slice(self.m, 2 * self.m))

    def block_norm(self, x: np.ndarray, b: int) -> float:
        xb = x[self.blocks()[b]]
        return math.sqrt(max(float(xb @ self.r_blocks[b] @ xb), 0.0))

    def metric_norm(self, x: np.ndarray) -> float:
        return math.sqrt(max(float(x @ self.metric @ x), 0.0))

    def riesz(self, g: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve(self._metric_factor, g)

    def smooth_gradient(self, x: np.ndarray) -> np.ndarray:
        return self.gram @ x + self.linear

    def value(self, x: np.ndarray) -> float:
        smooth = 0.5 * float(x @ self.gram @ x) + float(self.linear @ x)
        return smooth + self.radius * (self.block_norm(x, 0) + self.block_norm(x, 1))

    def prox(self, u: np.ndarray, step: float) -> np.ndarray:
        out = u.copy()
        for b, sl in enumerate(self.blocks()):
            size = self.block_norm(u, b)
            scale = max(0.0, 1.0 - step * self.radius / size) if size > 0.0 else 0.0
            out[sl] = scale * u[sl]
        return out

    def lipschitz(self, iterations: int) -> float:
        """Power iteration on R^{-1} G in the R inner product."""
        v = np.ones(2 * self.m)
        v /= self.metric_norm(v)
        estimate = 0.0
        for _ in range(iterations):
            w = self.riesz(self.gram @ v)
            size = self.metric_norm(w)
            if size == 0.0:
                return 0.0
            v = w / size
            if abs(size - estimate) <= 1e-10 * size:
                estimate = size
                break
            estimate = size
        return estimate

    def gradient_mapping(self, x: np.ndarray, lipschitz: float) -> float:
        step = 1.0 / lipschitz
        moved = self.prox(x - step * self.riesz(self.smooth_gradient(x)), step)
        return lipschitz * self.metric_norm(x - moved)

    def newton_polish(self, x: np.ndarray, steps: int) -> np.ndarray:
        """Damped Newton on the blocks that are nonzero, with zero blocks held fixed."""
        active = [b for b in range(2) if self.block_norm(x, b) > 0.0]
        if not active:
            return x
        index = np.concatenate([np.arange(2 * self.m)[self.blocks()[b]] for b in active])
        x = x.copy()
        for _ in range(steps):
            grad = self.smooth_gradient(x)
            hess = self.gram.copy()
            for b in active:
                sl = self.blocks()[b]
                size = self.block_norm(x, b)
                if size == 0.0:
                    return x
                rx = self.r_blocks[b] @ x[sl]
                grad[sl] += self.radius * rx / size
                hess[sl, sl] += self.radius * (self.r_blocks[b] / size - np.outer(rx, rx) / size**3)
            g = grad[index]
            try:
                direction = -scipy.linalg.solve(hess[np.ix_(index, index)], g, assume_a="sym")
            except (scipy.linalg.LinAlgError, ValueError):
                direction = -scipy.linalg.lstsq(hess[np.ix_(index, index)], g)[0]
            slope = float(g @ direction)
            if not slope < 0.0:
                break
            base = self.value(x)
            t = 1.0
            while t > 1e-10:
                trial = x.copy()
                trial[index] += t * direction
                if self.value(trial) <= base + 1e-4 * t * slope:
                    break
                t *= 0.5
            else:
                break
            if self.metric_norm(trial - x) <= 1e-15 * (1.0 + self.metric_norm(x)):
                x = trial
                break
            x = trial
        return x


def check_control_time(problem: LeaderProblem) -> Tuple[Optional[float], bool]:
    """Return (threshold, below) and warn when T does not exceed the side's sufficient horizon."""
    template = problem.follower_template
    threshold = threshold_for_side(template.profile, problem.side)
    if threshold is None:
        logger.warning("profile bounds (m, M) are not valid; no control-time threshold available")
        return None, False
    below = problem.grid.T <= threshold
    if below:
        message = (
            f"T={problem.grid.T:g} does not exceed the sufficient control time {threshold:.6g} "
            f"for side {problem.side.value}; admissibility is not guaranteed"
        )
        logger.warning(message)
        warnings.warn(message, ControlTimeWarning, stacklevel=2)
    return threshold, below


def minimize_theta(
    problem: LeaderProblem,
    background: Optional[Background] = None,
    quadratic: Optional[DualQuadratic] = None,
) -> DualVariable:
    """Accelerated proximal gradient with restart on increase, polished by active-block Newton."""
    settings = problem.settings
    grid = problem.grid
    check_control_time(problem)
    if background is None:
        background = solve_background(problem)
    if quadratic is None:
        quadratic = DualQuadratic(problem, background, problem.effective_epsilon)

    lipschitz = quadratic.lipschitz(settings.power_iterations) * 1.05
    if lipschitz <= 0.0:
        lipschitz = 1.0
    step = 1.0 / lipschitz
    scale = 1.0 + math.sqrt(max(float(quadratic.linear @ quadratic.riesz(quadratic.linear)), 0.0))
    target = settings.tol * scale

    x = np.zeros(2 * grid.interior)
    y = x.copy()
    t = 1.0
    value = quadratic.value(x)
    history: List[float] = []
    values: List[float] = []
    for k in range(1, settings.max_iter + 1):
        raise_if_cancelled()
        residual = quadratic.gradient_mapping(x, lipschitz)
        history.append(residual)
        values.append(value)
        logger.debug("theta iter %d value %.12e residual %.3e", k, value, residual)
        if residual <= target:
            return DualVariable.from_vector(grid, x, iterations=k, residual_history=history, theta_history=values)
        if k % settings.newton_every == 0:
            polished = quadratic.newton_polish(x, settings.newton_steps)
            polished_value = quadratic.value(polished)
            if polished_value <= value + 1e-14 * (1.0 + abs(value)):
                polished_residual = quadratic.gradient_mapping(polished, lipschitz)
                if polished_residual <= target:
                    history.append(polished_residual)
                    logger.debug("newton refinement converged at iteration %d", k)
                    return DualVariable.from_vector(
                        grid, polished, iterations=k, residual_history=history, theta_history=values
                    )
                if polished_residual < residual:
                    x, y, value, t = polished, polished.copy(), polished_value, 1.0
                    continue

        candidate = quadratic.prox(y - step * quadratic.riesz(quadratic.smooth_gradient(y)), step)
        candidate_value = quadratic.value(candidate)
        if candidate_value > value:
            # restart from the last accepted iterate
            t = 1.0
            y = x.copy()
            continue
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = candidate + ((t - 1.0) / t_next) * (candidate - x)
        x, value, t = candidate, candidate_value, t_next

    dual = DualVariable.from_vector(
        grid, x, iterations=settings.max_iter, residual_history=history, theta_history=values
    )
    raise LeaderIterationError(
        f"dual minimization did not reach residual {target:.3e} in {settings.max_iter} iterations", history, dual
    )


def recover_and_verify(
    problem: LeaderProblem,
    xi: DualVariable,
    background: Optional[Background] = None,
) -> LeaderSolution:
    grid = problem.grid
    template = problem.follower_template
    if background is None:
        background = solve_background(problem)
    threshold, below = check_control_time(problem)

    leader = apply_Astar(xi, problem)
    follower: FollowerSolution = solve_follower(template.with_leader(leader))
    pair = terminal_pair(follower.state.values, grid)
    position_error = norm(_interior(pair.position - problem.v0), NormKind.L2_OMEGA, grid)
    velocity_error = norm(_interior(pair.velocity - problem.v1), NormKind.HMINUS1_OMEGA, grid)
    leader_cost = 0.5 * trace_norm(leader.values, grid) ** 2
    theta_value = theta(xi, problem, background, radius=problem.effective_epsilon)
    gap = leader_cost + theta_value
    # |u(T) - u^T| in L2(0, alpha(T)) over the full slice
    alpha_T = float(eval_profile(template.profile, grid.T)[0])
    physical_error = math.sqrt(alpha_T) * norm(pair.position - problem.v0, NormKind.L2_OMEGA, grid)
    admissible = position_error < problem.epsilon and velocity_error < problem.epsilon
    position_admissible = physical_error < problem.epsilon
    if not admissible:
        logger.warning(
            "recovered leader is not admissible: position error %.3e, velocity error %.3e, epsilon %.3e",
            position_error, velocity_error, problem.epsilon,
        )
    logger.info(
        "leader on %s: J=%.6e theta=%.6e gap=%.3e errors (%.3e, %.3e)",
        problem.side.value, leader_cost, theta_value, gap, position_error, velocity_error,
    )
    return LeaderSolution(
        leader=leader,
        follower=follower.follower,
        dual_optimum=xi,
        theta_value=theta_value,
        leader_cost=leader_cost,
        terminal_position_error=position_error,
        terminal_velocity_error=velocity_error,
        physical_position_error=physical_error,
        duality_gap=gap,
        iterations=xi.iterations,
        state=follower.state,
        admissible=admissible,
        position_admissible=position_admissible,
        threshold=threshold,
        below_threshold=below,
    )


def solve_leader(problem: LeaderProblem) -> LeaderSolution:
    background = solve_background(problem)
    with warnings.catch_warnings():
        # recover_and_verify reports the threshold once
        warnings.simplefilter("ignore", ControlTimeWarning)
        xi = minimize_theta(problem, background)
    return recover_and_verify(problem, xi, background)
