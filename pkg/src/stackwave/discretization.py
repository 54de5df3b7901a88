"""Space-time grids on the cylinder, discrete norms and the one-step operators of the scheme."""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .geometry import BoundaryProfile, Side, coefficients, eval_profile


class ShapeError(ValueError):
    pass


class CFLViolation(ValueError):
    pass


# ---------------------------------------------------------------------------
# Grid and grid functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Uniform lattice on (0,1)x(0,T): nodes y_j = j/Ny, levels t_n = n*T/Nt."""

    Ny: int
    Nt: int
    T: float
    cfl_ratio: float = 0.4

    @property
    def dy(self) -> float:
        return 1.0 / self.Ny

    @property
    def dt(self) -> float:
        return self.T / self.Nt

    @property
    def interior(self) -> int:
        return self.Ny - 1

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.Ny + 1)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.Nt + 1)

    @property
    def field_shape(self) -> Tuple[int, int]:
        return (self.Nt + 1, self.Ny + 1)


def build_grid(Ny: int, Nt: int, T: float, cfl_ratio: float = 0.4) -> Grid:
    if Ny < 4 or Nt < 4:
        raise ShapeError(f"Ny and Nt must be at least 4, got Ny={Ny}, Nt={Nt}")
    if T <= 0:
        raise ShapeError("T must be positive")
    if cfl_ratio <= 0:
        raise CFLViolation("cfl_ratio must be positive")
    dy = 1.0 / Ny
    dt = T / Nt
    if dt > cfl_ratio * dy * (1.0 + 1e-12):
        min_nt = math.ceil(T / (cfl_ratio * dy) - 1e-9)
        raise CFLViolation(
            f"dt={dt:.6g} exceeds {cfl_ratio}*dy={cfl_ratio * dy:.6g}; use Nt >= {min_nt}"
        )
    return Grid(Ny=int(Ny), Nt=int(Nt), T=float(T), cfl_ratio=float(cfl_ratio))


@dataclass(eq=False)
class Field:
    """Values indexed by (time level n, node j)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.field_shape:
            raise ShapeError(f"field must have shape {self.grid.field_shape}, got {self.values.shape}")

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.field_shape))


@dataclass(eq=False)
class BoundaryTrace:
    grid: Grid
    side: Side
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.Nt + 1,):
            raise ShapeError(f"trace must have length {self.grid.Nt + 1}, got {self.values.shape}")

    @classmethod
    def zeros(cls, grid: Grid, side: Side) -> "BoundaryTrace":
        return cls(grid, side, np.zeros(grid.Nt + 1))


@dataclass(eq=False)
class StatePair:
    """Position and velocity slices at the final level."""

    position: np.ndarray
    velocity: np.ndarray


def terminal_pair(values: np.ndarray, grid: Grid) -> StatePair:
    """z(T) and the one-sided second-order z_t(T) of a trajectory array."""
    velocity = (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * grid.dt)
    return StatePair(position=values[-1].copy(), velocity=velocity)


# ---------------------------------------------------------------------------
# Quadrature and norms
# ---------------------------------------------------------------------------


def _trapezoid(count: int, step: float) -> np.ndarray:
    w = np.full(count, step)
    w[0] = w[-1] = 0.5 * step
    return w


def space_weights(grid: Grid) -> np.ndarray:
    return _trapezoid(grid.Ny + 1, grid.dy)


def trace_weights(grid: Grid) -> np.ndarray:
    return _trapezoid(grid.Nt + 1, grid.dt)


def space_time_weights(grid: Grid, profile: BoundaryProfile) -> np.ndarray:
    """Weights of the alpha(t)-weighted trapezoidal rule on Q."""
    alphas, _, _ = eval_profile(profile, grid.times)
    alphas = np.broadcast_to(alphas, grid.times.shape)
    return np.outer(alphas * trace_weights(grid), space_weights(grid))


def _dirichlet_banded(grid: Grid) -> np.ndarray:
    m = grid.interior
    ab = np.zeros((3, m))
    ab[0, 1:] = -1.0
    ab[1, :] = 2.0
    ab[2, :-1] = -1.0
    return ab / grid.dy**2


def solve_dirichlet(grid: Grid, rhs: np.ndarray) -> np.ndarray:
    """Interior solution of -u'' = rhs with u(0) = u(1) = 0 (second differences)."""
    return scipy.linalg.solve_banded((1, 1), _dirichlet_banded(grid), rhs)


def stiffness_matrix(grid: Grid) -> np.ndarray:
    """Dense dy*K on interior nodes: the Gram matrix of the discrete H^1_0 product."""
    m = grid.interior
    k = 2.0 * np.eye(m) - np.eye(m, k=1) - np.eye(m, k=-1)
    return k / grid.dy


class NormKind(str, enum.Enum):
    L2_OMEGA = "L2_Omega"
    H10_OMEGA = "H10_Omega"
    HMINUS1_OMEGA = "Hminus1_Omega"
    L2_GAMMA = "L2_Gamma"


def norm(obj, kind: NormKind, grid: Grid) -> float:
    """Discrete norm of a spatial slice (Omega kinds) or a boundary trace (L2_Gamma)."""
    kind = NormKind(kind)
    values = obj.values if isinstance(obj, BoundaryTrace) else np.asarray(obj, dtype=float)
    if kind is NormKind.L2_GAMMA:
        if values.shape != (grid.Nt + 1,):
            raise ShapeError(f"L2_Gamma needs a trace of length {grid.Nt + 1}")
        return float(np.sqrt(np.sum(trace_weights(grid) * values**2)))
    if isinstance(obj, BoundaryTrace) or values.shape != (grid.Ny + 1,):
        raise ShapeError(f"{kind.value} needs a spatial slice of length {grid.Ny + 1}")
    if kind is NormKind.L2_OMEGA:
        return float(np.sqrt(np.sum(space_weights(grid) * values**2)))
    if kind is NormKind.H10_OMEGA:
        return float(np.sqrt(np.sum(np.diff(values) ** 2) / grid.dy))
    interior = values[1:-1]
    u = solve_dirichlet(grid, interior)
    return float(np.sqrt(max(grid.dy * float(interior @ u), 0.0)))


def trace_inner(a: np.ndarray, b: np.ndarray, grid: Grid) -> float:
    return float(np.sum(trace_weights(grid) * a * b))


def trace_norm(a: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(max(trace_inner(a, a, grid), 0.0)))


# ---------------------------------------------------------------------------
# One-step operators
# ---------------------------------------------------------------------------


class Direction(str, enum.Enum):
    FORWARD_L = "forward_L"
    BACKWARD_LSTAR = "backward_Lstar"


def _transpose_banded(ab: np.ndarray) -> np.ndarray:
    out = np.zeros_like(ab)
    out[1] = ab[1]
    out[0, 1:] = ab[2, :-1]
    out[2, :-1] = ab[0, 1:]
    return out


@dataclass(frozen=True, eq=False)
class StepOperator:
    """One step of the scheme: new interior values from two known levels.

    new = lhs^{-1} (current @ u_now + lagged @ u_lag + boundary @ b_new + source)
    where u_now, u_lag are full slices and b_new the (left, right) values
    imposed at the new level.
    """

    level: int
    lhs: np.ndarray
    current: sp.csr_matrix
    lagged: sp.csr_matrix
    boundary: np.ndarray
    lhs_transpose: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "lhs_transpose", _transpose_banded(self.lhs))

    def apply(self, u_now, u_lag, boundary_values, source) -> np.ndarray:
        rhs = self.current @ u_now + self.lagged @ u_lag + self.boundary @ boundary_values + source
        return scipy.linalg.solve_banded((1, 1), self.lhs, rhs, check_finite=False)

    def apply_transpose(self, cotangent: np.ndarray):
        """Transpose of `apply`: returns (now_bar, lag_bar, boundary_bar, source_bar)."""
        r = scipy.linalg.solve_banded((1, 1), self.lhs_transpose, cotangent, check_finite=False)
        return self.current.T @ r, self.lagged.T @ r, self.boundary.T @ r, r


@dataclass(frozen=True, eq=False)
class StartOperator:
    """Taylor start z^1 = current @ z^0 + velocity @ z_t(0) + source_scale * s^0 (interior)."""

    current: sp.csr_matrix
    velocity: sp.csr_matrix
    source_scale: float


@dataclass(frozen=True, eq=False)
class StepOperators:
    direction: Direction
    grid: Grid
    profile: BoundaryProfile
    steps: Tuple[StepOperator, ...]
    start: Optional[StartOperator] = None


def _stencil(grid: Grid, left: np.ndarray, center: np.ndarray, right: np.ndarray) -> sp.csr_matrix:
    """(m, Ny+1) matrix with row i touching nodes i, i+1, i+2."""
    m = grid.interior
    return sp.diags([left, center, right], offsets=[0, 1, 2], shape=(m, grid.Ny + 1), format="csr")


def _level_coefficients(profile: BoundaryProfile, grid: Grid, t: float):
    alpha, _, _ = eval_profile(profile, t)
    y = grid.nodes
    half = 0.5 * (y[:-1] + y[1:])
    beta_half, _, _ = coefficients(profile, half, t)
    _, gamma, tau = coefficients(profile, y, t)
    return beta_half / alpha, gamma / alpha, tau / alpha


def _flux_and_drift(grid: Grid, b: np.ndarray, tau_hat: np.ndarray, *, adjoint: bool) -> sp.csr_matrix:
    """[(beta/alpha) u_y]_y minus the first-order term (tau/alpha u_y, or its transpose)."""
    dy = grid.dy
    bm, bp = b[:-1], b[1:]
    flux = _stencil(grid, bm / dy**2, -(bm + bp) / dy**2, bp / dy**2)
    if adjoint:
        # + [tau_hat p]_y
        drift = _stencil(grid, -tau_hat[:-2] / (2 * dy), np.zeros(grid.interior), tau_hat[2:] / (2 * dy))
    else:
        # - tau_hat z_y
        t_int = tau_hat[1:-1]
        drift = _stencil(grid, t_int / (2 * dy), np.zeros(grid.interior), -t_int / (2 * dy))
    return flux + drift


def _identity(grid: Grid, scale: float) -> sp.csr_matrix:
    m = grid.interior
    return _stencil(grid, np.zeros(m), np.full(m, scale), np.zeros(m))


def _forward_step(profile: BoundaryProfile, grid: Grid, n: int) -> StepOperator:
    dt, dy, m = grid.dt, grid.dy, grid.interior
    b, c, tau_hat = _level_coefficients(profile, grid, grid.times[n])
    kappa = c / (4.0 * dt * dy)
    k_int = kappa[1:-1]

    current = _identity(grid, 2.0 / dt**2) + _flux_and_drift(grid, b, tau_hat, adjoint=False)
    lagged = _identity(grid, -1.0 / dt**2) + _stencil(grid, -k_int, np.zeros(m), k_int)

    lhs = np.zeros((3, m))
    lhs[1] = 1.0 / dt**2
    lhs[0, 1:] = k_int[:-1]
    lhs[2, :-1] = -k_int[1:]

    boundary = np.zeros((m, 2))
    boundary[0, 0] = k_int[0]
    boundary[-1, 1] = -k_int[-1]
    return StepOperator(level=n, lhs=lhs, current=current.tocsr(), lagged=lagged.tocsr(), boundary=boundary)


def _forward_start(profile: BoundaryProfile, grid: Grid) -> StartOperator:
    dt, dy, m = grid.dt, grid.dy, grid.interior
    b, c, tau_hat = _level_coefficients(profile, grid, 0.0)
    half_dt2 = 0.5 * dt**2
    c_int = c[1:-1]
    operator = _flux_and_drift(grid, b, tau_hat, adjoint=False)
    mixed = _stencil(grid, c_int / (2 * dy), np.zeros(m), -c_int / (2 * dy))
    current = _identity(grid, 1.0) + half_dt2 * operator
    velocity = _identity(grid, dt) + half_dt2 * mixed
    return StartOperator(current=current.tocsr(), velocity=velocity.tocsr(), source_scale=half_dt2)


def _backward_step(profile: BoundaryProfile, grid: Grid, n: int) -> StepOperator:
    """Step at level n producing level n-1 for p_tt + L*p = source."""
    dt, dy, m = grid.dt, grid.dy, grid.interior
    b, _, tau_hat = _level_coefficients(profile, grid, grid.times[n])
    _, c_prev, _ = _level_coefficients(profile, grid, grid.times[n - 1])
    _, c_next, _ = _level_coefficients(profile, grid, grid.times[n + 1])
    kap_prev = c_prev / (4.0 * dt * dy)
    kap_next = c_next / (4.0 * dt * dy)

    current = _identity(grid, 2.0 / dt**2) + _flux_and_drift(grid, b, tau_hat, adjoint=True)
    lagged = _identity(grid, -1.0 / dt**2) + _stencil(grid, kap_next[:-2], np.zeros(m), -kap_next[2:])

    lhs = np.zeros((3, m))
    lhs[1] = 1.0 / dt**2
    lhs[0, 1:] = -kap_prev[2:-1]
    lhs[2, :-1] = kap_prev[1:-2]
    return StepOperator(level=n, lhs=lhs, current=current.tocsr(), lagged=lagged.tocsr(), boundary=np.zeros((m, 2)))


@functools.lru_cache(maxsize=32)
def assemble_step_operators(profile: BoundaryProfile, grid: Grid, direction: Direction = Direction.FORWARD_L) -> StepOperators:
    """Sequence of one-step maps; forward steps run n = 1..Nt-1, backward n = Nt-1..1.

    The result is immutable and cached per (profile, grid, direction).
    """
    direction = Direction(direction)
    if direction is Direction.FORWARD_L:
        steps = tuple(_forward_step(profile, grid, n) for n in range(1, grid.Nt))
        return StepOperators(direction, grid, profile, steps, start=_forward_start(profile, grid))
    steps = tuple(_backward_step(profile, grid, n) for n in range(grid.Nt - 1, 0, -1))
    return StepOperators(direction, grid, profile, steps)


def normal_derivative_trace(field_values, side: Side, grid: Grid) -> BoundaryTrace:
    """Second-order one-sided d/dy at y=0 or y=1 for every time level."""
    values = field_values.values if isinstance(field_values, Field) else np.asarray(field_values, dtype=float)
    if grid.Ny < 3 or values.shape[-1] != grid.Ny + 1:
        raise ShapeError("normal derivative needs at least three nodes matching the grid")
    if side is Side.GAMMA_0:
        d = (-3.0 * values[..., 0] + 4.0 * values[..., 1] - values[..., 2]) / (2.0 * grid.dy)
    else:
        d = (3.0 * values[..., -1] - 4.0 * values[..., -2] + values[..., -3]) / (2.0 * grid.dy)
    return BoundaryTrace(grid, side, d)
