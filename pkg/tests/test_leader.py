"""Basic unit tests for the leader problem and the dual functional."""
import warnings

import numpy as np
import pytest

from stackwave.discretization import (
    ShapeError,
    StatePair,
    build_grid,
    stiffness_matrix,
    trace_inner,
    trace_norm,
    trace_weights,
)
from stackwave.follower import FollowerProblem
from stackwave.geometry import BoundaryProfile, Side
from stackwave.leader import (
    ControlTimeWarning,
    DualVariable,
    LeaderProblem,
    apply_A,
    apply_Astar,
    check_control_time,
    dual_pairing,
    minimize_theta,
    recover_and_verify,
    solve_background,
    solve_leader,
    theta,
    theta_gradient,
    theta_smooth,
)
from stackwave.oracle import fd_gradient
from stackwave.wave_solver import apply_transposed_forward

PROFILE = BoundaryProfile.affine(0.3)


def _problem(side=Side.GAMMA_0, Ny=8, Nt=16, T=0.75, v0=None, v1=None, z0=None, epsilon=1e-2, profile=PROFILE):
    grid = build_grid(Ny, Nt, T)
    template = FollowerProblem(grid, profile, side=side, penalty=100.0, z0=z0)
    return LeaderProblem(template, v0=v0, v1=v1, epsilon=epsilon)


def _random_dual(grid, seed):
    rng = np.random.default_rng(seed)
    return DualVariable.from_vector(grid, rng.standard_normal(2 * grid.interior))


def test_problem_validation():
    grid = build_grid(8, 16, 0.75)
    template = FollowerProblem(grid, PROFILE)
    with pytest.raises(ValueError):
        LeaderProblem(template, epsilon=0.0)
    with pytest.raises(ValueError):
        LeaderProblem(template, margin=1.0)
    with pytest.raises(ShapeError):
        LeaderProblem(template, v0=np.zeros(3))
    problem = LeaderProblem(template, epsilon=1e-2, margin=1e-3)
    assert problem.effective_epsilon == pytest.approx(0.999e-2)
    assert problem.side is Side.GAMMA_0


def test_dual_variable_boundary_entries():
    grid = build_grid(8, 16, 0.75)
    f0 = np.zeros(grid.Ny + 1)
    f0[0] = 1.0
    with pytest.raises(ShapeError):
        DualVariable(grid, f0, np.zeros(grid.Ny + 1))
    f1 = np.ones(grid.Ny + 1)
    xi = DualVariable(grid, np.zeros(grid.Ny + 1), f1)
    assert xi.f1[0] == 0.0 and xi.f1[-1] == 0.0
    assert xi.vector.shape == (2 * grid.interior,)


def test_apply_A_is_linear():
    problem = _problem()
    grid = problem.grid
    zero = apply_A(np.zeros(grid.Nt + 1), problem)
    assert not np.any(zero.velocity) and not np.any(zero.minus_position)

    rng = np.random.default_rng(0)
    f = rng.standard_normal(grid.Nt + 1)
    g = rng.standard_normal(grid.Nt + 1)
    a = apply_A(f, problem)
    b = apply_A(g, problem)
    ab = apply_A(2.0 * f - g, problem)
    scale = np.abs(ab.velocity).max()
    np.testing.assert_allclose(ab.velocity, 2.0 * a.velocity - b.velocity, atol=1e-8 * scale)
    scale = np.abs(ab.minus_position).max()
    np.testing.assert_allclose(ab.minus_position, 2.0 * a.minus_position - b.minus_position, atol=1e-8 * scale)


@pytest.mark.parametrize("side", [Side.GAMMA_0, Side.GAMMA_ALPHA])
def test_A_and_Astar_are_adjoint(side):
    problem = _problem(side)
    grid = problem.grid
    rng = np.random.default_rng(1)
    for _ in range(50):
        f = rng.standard_normal(grid.Nt + 1)
        xi = DualVariable.from_vector(grid, rng.standard_normal(2 * grid.interior))
        left = dual_pairing(apply_A(f, problem), xi, grid)
        right = trace_inner(f, apply_Astar(xi, problem).values, grid)
        assert abs(left - right) <= 1e-8 * (1.0 + abs(left))


def test_theta_at_zero_and_homogeneity():
    problem = _problem()
    background = solve_background(problem)
    grid = problem.grid
    assert theta(DualVariable.zeros(grid), problem, background) == 0.0

    xi = _random_dual(grid, 2)
    xi = DualVariable(grid, xi.f0, np.zeros(grid.Ny + 1))
    quadratic = theta_smooth(xi, problem, background)
    single = theta(xi, problem, background)
    double = theta(DualVariable(grid, 2.0 * xi.f0, xi.f1), problem, background)
    penalty = single - quadratic
    assert double == pytest.approx(4.0 * quadratic + 2.0 * penalty, rel=1e-8)


@pytest.mark.parametrize("side", [Side.GAMMA_0, Side.GAMMA_ALPHA])
def test_theta_gradient_against_finite_differences(side):
    grid = build_grid(8, 16, 0.75)
    v0 = 0.1 * np.sin(np.pi * grid.nodes)
    problem = _problem(side, v0=v0)
    background = solve_background(problem)
    xi = _random_dual(grid, 3)
    riesz = theta_gradient(xi, problem, background, tol=1e-13)
    euclidean = np.concatenate([stiffness_matrix(grid) @ riesz.f0[1:-1], grid.dy * riesz.f1[1:-1]])
    numeric = fd_gradient(
        lambda x: theta_smooth(DualVariable.from_vector(grid, x), problem, background, tol=1e-13),
        xi.vector,
        h=1e-5,
    )
    assert np.max(np.abs(numeric - euclidean)) <= 1e-5 * np.max(np.abs(euclidean))


def test_reachable_targets_give_zero_dual():
    grid = build_grid(8, 16, 0.75)
    z0 = np.sin(np.pi * grid.nodes)
    free = _problem(z0=z0)
    background = solve_background(free)
    problem = _problem(z0=z0, v0=background.terminal.position, v1=background.terminal.velocity)
    with pytest.warns(ControlTimeWarning):
        xi = minimize_theta(problem, background)
    assert not np.any(xi.vector)
    with pytest.warns(ControlTimeWarning):
        solution = recover_and_verify(problem, xi, background)
    assert not np.any(solution.leader.values)
    assert solution.duality_gap == 0.0
    assert solution.terminal_position_error <= 1e-8
    assert solution.terminal_velocity_error <= 1e-8
    assert solution.admissible


def test_long_horizon_does_not_warn():
    grid = build_grid(8, 100, 5.0)
    profile = BoundaryProfile.affine(0.015, m=0.01, M=0.02)
    problem = LeaderProblem(FollowerProblem(grid, profile))
    with warnings.catch_warnings():
        warnings.simplefilter("error", ControlTimeWarning)
        threshold, below = check_control_time(problem)
    assert threshold == pytest.approx(4.39, abs=0.05)
    assert not below


def test_short_horizon_warns():
    problem = _problem()
    with pytest.warns(ControlTimeWarning, match="sufficient control time"):
        threshold, below = check_control_time(problem)
    assert below
    assert threshold > problem.grid.T


@pytest.mark.parametrize("side", [Side.GAMMA_0, Side.GAMMA_ALPHA])
def test_leader_reaches_target_within_tolerance(side):
    grid = build_grid(16, 160, 1.6)
    v0 = 0.1 * np.sin(np.pi * grid.nodes)
    problem = _problem(side, Ny=16, Nt=160, T=1.6, v0=v0, profile=BoundaryProfile.affine(0.3, m=0.2, M=0.4))
    with pytest.warns(ControlTimeWarning):
        solution = solve_leader(problem)
    assert solution.below_threshold
    assert solution.terminal_position_error < 1e-2
    assert solution.terminal_velocity_error < 1e-2
    assert solution.admissible
    assert abs(solution.duality_gap) <= 1e-4 * (1.0 + solution.leader_cost)
    assert solution.leader_cost > 0.0
    assert solution.leader.side is side
    assert solution.iterations == solution.dual_optimum.iterations
    assert trace_norm(solution.leader.values, grid) == pytest.approx(np.sqrt(2.0 * solution.leader_cost))


def test_position_check_covers_the_full_slice():
    grid = build_grid(8, 16, 0.75)
    z0 = np.sin(np.pi * grid.nodes)
    background = solve_background(_problem(z0=z0))
    v0 = background.terminal.position.copy()
    v0[-1] += 0.5
    problem = _problem(z0=z0, v0=v0, v1=background.terminal.velocity)
    with pytest.warns(ControlTimeWarning):
        solution = recover_and_verify(problem, DualVariable.zeros(grid), background)
    # the pair sees interior nodes only
    assert solution.terminal_position_error <= 1e-8
    assert solution.admissible
    alpha_T = 1.0 + 0.3 * 0.75
    expected = np.sqrt(alpha_T) * 0.5 * np.sqrt(grid.dy / 2.0)
    assert solution.physical_position_error == pytest.approx(expected, rel=1e-6)
    assert not solution.position_admissible


def _target_problem(epsilon=1e-2, side=Side.GAMMA_0):
    grid = build_grid(8, 16, 0.75)
    return _problem(side, v0=0.1 * np.sin(np.pi * grid.nodes), epsilon=epsilon)


def test_dual_optimum_is_not_beaten_by_perturbations():
    problem = _target_problem()
    grid = problem.grid
    background = solve_background(problem)
    with pytest.warns(ControlTimeWarning):
        xi = minimize_theta(problem, background)
    radius = problem.effective_epsilon
    best = theta(xi, problem, background, radius=radius)
    scale = 1e-3 * (1.0 + np.linalg.norm(xi.vector))
    rng = np.random.default_rng(11)
    for _ in range(20):
        step = rng.standard_normal(2 * grid.interior)
        moved = DualVariable.from_vector(grid, xi.vector + scale * step / np.linalg.norm(step))
        assert theta(moved, problem, background, radius=radius) >= best - 1e-10


def test_dual_iterates_never_increase_theta():
    problem = _target_problem()
    with pytest.warns(ControlTimeWarning):
        xi = minimize_theta(problem)
    values = np.array(xi.theta_history)
    assert values.size == xi.iterations
    assert values[0] == 0.0
    assert np.all(np.diff(values) <= 1e-12 * (1.0 + np.abs(values[1:])))


def test_larger_epsilon_costs_less():
    costs = []
    for epsilon in (1e-2, 2e-2):
        with pytest.warns(ControlTimeWarning):
            costs.append(solve_leader(_target_problem(epsilon)).leader_cost)
    assert costs[1] <= costs[0] + 1e-12


@pytest.mark.parametrize("side", [Side.GAMMA_0, Side.GAMMA_ALPHA])
def test_large_penalty_reduces_Astar_to_plain_transpose(side):
    grid = build_grid(8, 16, 0.75)
    template = FollowerProblem(grid, PROFILE, side=side, penalty=1e10)
    problem = LeaderProblem(template)
    xi = _random_dual(grid, 12)
    terminal = StatePair(position=-grid.dy * xi.f1, velocity=grid.dy * xi.f0)
    plain = apply_transposed_forward(side, grid, PROFILE, terminal=terminal).values / trace_weights(grid)
    np.testing.assert_allclose(apply_Astar(xi, problem).values, plain, rtol=1e-6, atol=1e-6 * np.abs(plain).max())


def test_static_string_is_symmetric_between_ends():
    grid = build_grid(8, 50, 2.5)
    v0 = 0.1 * np.sin(np.pi * grid.nodes)
    solutions = []
    for side in (Side.GAMMA_0, Side.GAMMA_0.mirror()):
        template = FollowerProblem(grid, BoundaryProfile.static(), side=side, penalty=100.0)
        solutions.append(solve_leader(LeaderProblem(template, v0=v0, epsilon=1e-2)))
    left, right = solutions
    assert right.leader.side is Side.GAMMA_ALPHA
    assert right.leader_cost == pytest.approx(left.leader_cost, rel=1e-5)
    scale = np.abs(left.leader.values).max()
    np.testing.assert_allclose(right.leader.values, left.leader.values, atol=1e-4 * scale)
    np.testing.assert_allclose(right.state.values, left.state.values[:, ::-1], atol=1e-4 * scale)
