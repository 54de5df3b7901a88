"""Moving-boundary profiles, hypothesis checks and the change of variables y = x/alpha(t)."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, List, Optional, Tuple

import mpmath
import numpy as np

if TYPE_CHECKING:
    from .discretization import Grid


class GeometryError(ValueError):
    pass


class Side(str, enum.Enum):
    """Which end of the cylinder carries the controls."""

    GAMMA_0 = "gamma0"
    GAMMA_ALPHA = "gamma_alpha"

    @property
    def node(self) -> int:
        # column index of the boundary node in a (Nt+1, Ny+1) field
        return 0 if self is Side.GAMMA_0 else -1

    def mirror(self) -> "Side":
        return Side.GAMMA_ALPHA if self is Side.GAMMA_0 else Side.GAMMA_0


class ProfileKind(str, enum.Enum):
    AFFINE = "affine"
    ARCTAN_DRIFT = "arctan"
    CUSTOM = "custom"


class MonotoneDirection(str, enum.Enum):
    INCREASING = "increasing"
    DECREASING = "decreasing"


ProfileFn = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class BoundaryProfile:
    """Right endpoint alpha(t) of the physical domain (0, alpha(t)).

    m and M are the declared speed bounds used by the hypothesis check and by
    the control-time thresholds. Use the constructors rather than building
    the dataclass by hand.
    """

    kind: ProfileKind
    m: float
    M: float
    parameter: float = 0.0
    direction: MonotoneDirection = MonotoneDirection.INCREASING
    custom: Optional[ProfileFn] = None

    @classmethod
    def affine(cls, k: float, m: Optional[float] = None, M: Optional[float] = None) -> "BoundaryProfile":
        if m is None:
            m = 0.5 * k
        if M is None:
            M = 0.5 * (1.0 + k)
        return cls(ProfileKind.AFFINE, float(m), float(M), parameter=float(k), direction=MonotoneDirection.INCREASING)

    @classmethod
    def arctan_drift(cls, c: float, m: Optional[float] = None, M: Optional[float] = None) -> "BoundaryProfile":
        if c <= 0:
            raise GeometryError("arctan drift parameter c must be positive")
        if m is None:
            m = 0.5 / c
        if M is None:
            M = 0.5 * (1.0 + 2.0 / c)
        return cls(ProfileKind.ARCTAN_DRIFT, float(m), float(M), parameter=float(c), direction=MonotoneDirection.DECREASING)

    @classmethod
    def from_function(
        cls,
        fn: ProfileFn,
        m: float,
        M: float,
        direction: MonotoneDirection = MonotoneDirection.INCREASING,
    ) -> "BoundaryProfile":
        return cls(ProfileKind.CUSTOM, float(m), float(M), direction=direction, custom=fn)

    @classmethod
    def static(cls) -> "BoundaryProfile":
        """alpha == 1: the plain wave equation. Fails H2; needs the degenerate flag."""
        return cls(ProfileKind.AFFINE, 0.0, 0.0, parameter=0.0)


def eval_profile(profile: BoundaryProfile, t):
    """Return (alpha, alpha', alpha'') at t (scalar or array)."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise GeometryError("profile evaluated at negative time")
    if profile.kind is ProfileKind.AFFINE:
        k = profile.parameter
        alpha = 1.0 + k * t_arr
        speed = np.full_like(t_arr, k)
        accel = np.zeros_like(t_arr)
    elif profile.kind is ProfileKind.ARCTAN_DRIFT:
        c = profile.parameter
        denom = 1.0 + t_arr * t_arr
        alpha = 1.0 + (t_arr + np.arctan(t_arr)) / c
        speed = (1.0 + 1.0 / denom) / c
        accel = -2.0 * t_arr / (c * denom * denom)
    else:
        if profile.custom is None:
            raise GeometryError("custom profile has no evaluation function")
        alpha, speed, accel = (np.asarray(v, dtype=float) for v in profile.custom(t_arr))
    if np.ndim(t) == 0:
        return float(alpha), float(speed), float(accel)
    return alpha, speed, accel


@dataclass(frozen=True)
class HypothesisReport:
    h1_ok: bool
    h2_ok: bool
    h3_ok: bool
    observed_min_speed: float
    observed_max_speed: float
    samples: int
    observed_direction: Optional[MonotoneDirection] = None

    @property
    def ok(self) -> bool:
        return self.h1_ok and self.h2_ok and self.h3_ok

    def failures(self) -> List[str]:
        names = []
        if not self.h1_ok:
            names.append("H1 (alpha(0) = 1)")
        if not self.h2_ok:
            names.append("H2 (m < alpha' < M, 0 < m < M < 1)")
        if not self.h3_ok:
            names.append("H3 (alpha' monotone)")
        return names


def validate_hypotheses(profile: BoundaryProfile, T: float, samples: int = 10_000) -> HypothesisReport:
    if T <= 0:
        raise GeometryError("T must be positive")
    if samples < 2:
        raise GeometryError("at least two samples are needed")
    alpha0, _, _ = eval_profile(profile, 0.0)
    h1_ok = alpha0 == 1.0

    t = np.linspace(0.0, T, samples)
    _, speed, _ = eval_profile(profile, t)
    speed = np.broadcast_to(speed, t.shape)
    bounds_ok = 0.0 < profile.m < profile.M < 1.0
    h2_ok = bool(bounds_ok and np.all(speed > profile.m) and np.all(speed < profile.M))

    diffs = np.diff(speed)
    if np.all(diffs == 0):
        direction = profile.direction
    elif np.all(diffs >= 0):
        direction = MonotoneDirection.INCREASING
    elif np.all(diffs <= 0):
        direction = MonotoneDirection.DECREASING
    else:
        direction = None
    h3_ok = direction is profile.direction

    return HypothesisReport(
        h1_ok=h1_ok,
        h2_ok=h2_ok,
        h3_ok=h3_ok,
        observed_min_speed=float(np.min(speed)),
        observed_max_speed=float(np.max(speed)),
        samples=samples,
        observed_direction=direction,
    )


def coefficients(profile: BoundaryProfile, y, t):
    """beta, gamma, tau of the transformed operator L at (y, t); broadcasts."""
    y_arr = np.asarray(y, dtype=float)
    alpha, speed, accel = eval_profile(profile, t)
    beta = (1.0 - (speed * y_arr) ** 2) / alpha
    gamma = -2.0 * speed * y_arr
    tau = -accel * y_arr
    if np.ndim(beta) == 0:
        return float(beta), float(gamma), float(tau)
    return beta, gamma, tau


def _check_speed_bounds(m: float, M: float) -> None:
    if not (0.0 < m < M < 1.0):
        raise GeometryError(f"speed bounds must satisfy 0 < m < M < 1, got m={m}, M={M}")


def control_time_thresholds(m: float, M: float) -> Tuple[float, float]:
    """Sufficient control horizons (T1 for Gamma_0, T2 for Gamma_alpha)."""
    _check_speed_bounds(m, M)
    t1 = math.expm1(2.0 * M * M * (1.0 - m) / (m * (1.0 - M) ** 3)) / M
    t2 = math.expm1(2.0 * M * M * (1.0 - m) * (1.0 + M) / (m * (1.0 - M) ** 2)) / M
    return t1, t2


def control_time_thresholds_mp(m, M, dps: int = 60):
    """Same thresholds evaluated in mpmath with `dps` decimal digits."""
    _check_speed_bounds(float(m), float(M))
    with mpmath.workdps(dps):
        m_mp = mpmath.mpf(m)
        M_mp = mpmath.mpf(M)
        t1 = (mpmath.exp(2 * M_mp**2 * (1 - m_mp) / (m_mp * (1 - M_mp) ** 3)) - 1) / M_mp
        t2 = (mpmath.exp(2 * M_mp**2 * (1 - m_mp) * (1 + M_mp) / (m_mp * (1 - M_mp) ** 2)) - 1) / M_mp
        return +t1, +t2


def threshold_for_side(profile: BoundaryProfile, side: Side) -> Optional[float]:
    """T1 or T2 for the profile's declared bounds; None if the bounds are invalid."""
    try:
        t1, t2 = control_time_thresholds(profile.m, profile.M)
    except GeometryError:
        return None
    return t1 if side is Side.GAMMA_0 else t2


@dataclass(frozen=True)
class PhysicalData:
    """Data on the physical domain.

    u0, u1 are sampled at the Ny+1 grid nodes of (0, 1) (x = y at t = 0).
    uT is sampled uniformly on [0, alpha(T)] with any count >= 2. u2 and u4
    have one row per time level, each row sampled uniformly on [0, alpha(T)].
    """

    u0: np.ndarray
    u1: np.ndarray
    uT: np.ndarray
    u2: Optional[np.ndarray] = None
    u4: Optional[np.ndarray] = None


@dataclass(frozen=True)
class TransformedData:
    z0: np.ndarray
    z1: np.ndarray
    v0: np.ndarray
    z2: np.ndarray
    z4: np.ndarray


def _pull_back(samples: np.ndarray, x_max: float, x_query: np.ndarray) -> np.ndarray:
    x_samples = np.linspace(0.0, x_max, samples.shape[-1])
    return np.interp(x_query, x_samples, samples)


def transform_data(data: PhysicalData, profile: BoundaryProfile, grid: "Grid") -> TransformedData:
    """Carry physical data to the cylinder with y = x/alpha(t).

    z1 uses alpha'(0) * y * u0'(y); see DESIGN.md for the reading of the
    velocity line of the transformed data.
    """
    y = grid.nodes
    times = grid.times
    u0 = np.asarray(data.u0, dtype=float)
    u1 = np.asarray(data.u1, dtype=float)
    if u0.shape != y.shape or u1.shape != y.shape:
        raise GeometryError(f"u0 and u1 must have {y.size} samples, got {u0.shape} and {u1.shape}")
    uT = np.asarray(data.uT, dtype=float)
    if uT.ndim != 1 or uT.size < 2:
        raise GeometryError("uT must be a 1D array with at least two samples")

    _, speed0, _ = eval_profile(profile, 0.0)
    alpha_T, _, _ = eval_profile(profile, grid.T)
    alphas, _, _ = eval_profile(profile, times)

    z0 = u0.copy()
    z1 = u1 + speed0 * y * np.gradient(u0, y, edge_order=2)
    v0 = _pull_back(uT, alpha_T, alpha_T * y)

    def _space_time(u: Optional[np.ndarray], name: str) -> np.ndarray:
        if u is None:
            return np.zeros((times.size, y.size))
        u = np.asarray(u, dtype=float)
        if u.ndim != 2 or u.shape[0] != times.size or u.shape[1] < 2:
            raise GeometryError(f"{name} must have shape ({times.size}, K>=2), got {u.shape}")
        return np.vstack([_pull_back(u[n], alpha_T, alphas[n] * y) for n in range(times.size)])

    return TransformedData(z0=z0, z1=z1, v0=v0, z2=_space_time(data.u2, "u2"), z4=_space_time(data.u4, "u4"))


def read_columnar(path: str) -> np.ndarray:
    """Read one value per line after a `# n=<count>` header."""
    values: List[float] = []
    expected: Optional[int] = None
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("n="):
                    expected = int(body[2:])
                continue
            values.append(float(line))
    if expected is not None and expected != len(values):
        raise GeometryError(f"{path}: header declares n={expected} but {len(values)} values were read")
    return np.asarray(values)
