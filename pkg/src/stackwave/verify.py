"""Identity suite replayed by `stackwave verify`.

Each check returns an OracleRecord (discrepancy against tolerance). The
random instances are drawn from a generator seeded by the config, so the
report is reproducible.
"""

from __future__ import annotations

import logging
from typing import List

import numpy as np

from .config import ExperimentConfig, make_leader_problem
from .discretization import StatePair, stiffness_matrix, terminal_pair, trace_inner, trace_norm
from .follower import ControlMap, follower_gradient, solve_follower, solve_optimality_system
from .leader import (
    DualVariable,
    apply_A,
    apply_Astar,
    dual_pairing,
    solve_background,
    solve_leader,
    theta_gradient,
    theta_smooth,
)
from .oracle import (
    OracleRecord,
    assemble_dense_maps,
    coupled_terminal_map,
    dense_A,
    fd_gradient,
    follower_qp_oracle,
    instance_hash,
)

logger = logging.getLogger(__name__)


def _relative(diff: float, scale: float) -> float:
    return diff / scale if scale > 0.0 else diff


def _random_dual(rng: np.random.Generator, grid) -> DualVariable:
    return DualVariable.from_vector(grid, rng.standard_normal(2 * grid.interior))


def run_identity_suite(cfg: ExperimentConfig, jobs: int = 1) -> List[OracleRecord]:
    problem = make_leader_problem(cfg)
    template = problem.follower_template
    grid = problem.grid
    rng = np.random.default_rng(cfg.seed)
    tag = instance_hash(grid, template.profile, template.side, template.penalty, cfg.seed)
    records: List[OracleRecord] = []

    def record(name: str, discrepancy: float, tolerance: float) -> None:
        rec = OracleRecord(name, tag, float(discrepancy), tolerance)
        logger.info("%-28s discrepancy %.3e tolerance %.1e %s", name, rec.discrepancy, tolerance,
                    "ok" if rec.passed else "FAILED")
        records.append(rec)

    # B against its transpose
    cmap = ControlMap.for_problem(template)
    f = rng.standard_normal(grid.Nt + 1)
    cot = rng.standard_normal(grid.field_shape)
    terminal = StatePair(position=rng.standard_normal(grid.Ny + 1), velocity=rng.standard_normal(grid.Ny + 1))
    traj = cmap.response(f)
    pair = terminal_pair(traj, grid)
    lhs = float(np.sum(traj * cot) + pair.position @ terminal.position + pair.velocity @ terminal.velocity)
    rhs = float(f @ cmap.transpose(cot, terminal))
    record("transpose_pairing", _relative(abs(lhs - rhs), 1.0 + abs(lhs)), 1e-12)

    # follower first-order optimality and agreement with the optimality system
    follower = solve_follower(template)
    grad = follower_gradient(template, follower.follower)
    misfit = trace_norm(cmap.feedback(follower.state.values - template.tracking_target), grid)
    record("follower_first_order", trace_norm(grad.values, grid) / (1.0 + misfit), 1e-8)
    coupled = solve_optimality_system(template)
    diff = np.linalg.norm(coupled.state.values - follower.state.values)
    record("follower_optimality_system", _relative(diff, np.linalg.norm(follower.state.values)), 1e-6)

    # A against A*
    xi = _random_dual(rng, grid)
    f = rng.standard_normal(grid.Nt + 1)
    left = dual_pairing(apply_A(f, problem), xi, grid)
    right = trace_inner(f, apply_Astar(xi, problem).values, grid)
    record("A_Astar_pairing", abs(left - right) / (1.0 + abs(left)), 1e-8)

    # smooth part of Theta against central differences
    background = solve_background(problem)
    xi = _random_dual(rng, grid)
    riesz = theta_gradient(xi, problem, background, tol=1e-13)
    euclidean = np.concatenate([stiffness_matrix(grid) @ riesz.f0[1:-1], grid.dy * riesz.f1[1:-1]])
    numeric = fd_gradient(
        lambda x: theta_smooth(DualVariable.from_vector(grid, x), problem, background, tol=1e-13),
        xi.vector,
        h=1e-5,
    )
    scale = float(np.max(np.abs(euclidean))) if euclidean.size else 0.0
    record("theta_gradient_fd", _relative(float(np.max(np.abs(numeric - euclidean))), scale), 1e-5)

    # duality gap and admissibility of the recovered leader
    leader = solve_leader(problem)
    record("duality_gap", abs(leader.duality_gap) / (1.0 + leader.leader_cost), 1e-4)
    worst = max(leader.terminal_position_error, leader.terminal_velocity_error)
    record("admissibility", worst / problem.epsilon, 1.0)

    if cfg.dense_oracle:
        maps = assemble_dense_maps(grid, template.profile, template.side, jobs=jobs)
        qp = follower_qp_oracle(template, maps).values
        diff = trace_norm(qp - follower.follower.values, grid)
        record("dense_follower_qp", _relative(diff, trace_norm(qp, grid)), 1e-6)
        assembled = dense_A(problem, maps)
        closed = coupled_terminal_map(problem, maps)
        record(
            "dense_A_closed_form",
            _relative(np.linalg.norm(assembled.matrix - closed.matrix), np.linalg.norm(closed.matrix)),
            1e-8,
        )
        q = maps.trace_quadrature
        xi = _random_dual(rng, grid)
        f = rng.standard_normal(grid.Nt + 1)
        left = grid.dy * float(xi.vector @ (closed.matrix @ f))
        right = float(f @ (q * (closed.transpose @ xi.vector)))
        record("dense_A_adjoint", abs(left - right) / (1.0 + abs(left)), 1e-12)
    return records
