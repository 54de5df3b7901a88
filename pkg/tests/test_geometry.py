"""Basic unit tests for geometry."""
import numpy as np
import pytest

from stackwave.discretization import build_grid
from stackwave.geometry import (
    BoundaryProfile,
    GeometryError,
    MonotoneDirection,
    PhysicalData,
    coefficients,
    control_time_thresholds,
    control_time_thresholds_mp,
    eval_profile,
    read_columnar,
    transform_data,
    validate_hypotheses,
)


def test_eval_profile_closed_forms():
    assert eval_profile(BoundaryProfile.affine(0.3), 0.0) == (1.0, 0.3, 0.0)
    alpha, speed, accel = eval_profile(BoundaryProfile.affine(0.3), 1.0)
    assert alpha == pytest.approx(1.3)
    assert speed == pytest.approx(0.3)
    assert accel == 0.0
    assert eval_profile(BoundaryProfile.arctan_drift(4.0), 0.0) == (1.0, 0.5, 0.0)


def test_eval_profile_rejects_negative_time():
    with pytest.raises(GeometryError):
        eval_profile(BoundaryProfile.affine(0.3), -0.1)


def test_affine_profile_passes_hypotheses():
    report = validate_hypotheses(BoundaryProfile.affine(0.3, m=0.2, M=0.4), T=2.0, samples=100)
    assert report.ok
    assert report.failures() == []


def test_fast_affine_profile_fails_speed_bounds():
    report = validate_hypotheses(BoundaryProfile.affine(1.5), T=1.0)
    assert not report.h2_ok
    assert not report.ok


def test_arctan_drift_is_monotone_decreasing():
    profile = BoundaryProfile.arctan_drift(4.0, m=0.24, M=0.51)
    report = validate_hypotheses(profile, T=10.0)
    assert report.ok
    assert report.observed_direction is MonotoneDirection.DECREASING

    t = np.linspace(0.0, 10.0, 100_000)
    speed = (1.0 + 1.0 / (1.0 + t * t)) / 4.0
    assert report.observed_min_speed == pytest.approx(speed.min(), abs=1e-6)
    assert report.observed_max_speed == pytest.approx(speed.max(), abs=1e-6)


def test_static_profile_fails_speed_bounds():
    report = validate_hypotheses(BoundaryProfile.static(), T=1.0)
    assert report.h1_ok and report.h3_ok
    assert not report.h2_ok


def test_custom_profile_without_monotone_speed():
    def wobble(t):
        return 1.0 + 0.5 * t + 0.01 * np.sin(5 * t), 0.5 + 0.05 * np.cos(5 * t), -0.25 * np.sin(5 * t)

    report = validate_hypotheses(BoundaryProfile.from_function(wobble, m=0.4, M=0.6), T=3.0)
    assert report.h2_ok
    assert not report.h3_ok
    assert "H3 (alpha' monotone)" in report.failures()


def test_monotone_speed_must_match_declared_direction():
    def speeding_up(t):
        return 1.0 + 0.3 * t + 0.05 * t * t, 0.3 + 0.1 * t, 0.1 + 0.0 * t

    rising = BoundaryProfile.from_function(speeding_up, m=0.2, M=0.7, direction=MonotoneDirection.INCREASING)
    assert validate_hypotheses(rising, T=2.0).ok

    declared = BoundaryProfile.from_function(speeding_up, m=0.2, M=0.7, direction=MonotoneDirection.DECREASING)
    report = validate_hypotheses(declared, T=2.0)
    assert report.h1_ok and report.h2_ok
    assert not report.h3_ok
    assert report.observed_direction is MonotoneDirection.INCREASING


def test_coefficients_at_left_end():
    for profile in (BoundaryProfile.affine(0.3), BoundaryProfile.arctan_drift(4.0)):
        for t in (0.0, 0.7, 2.0):
            alpha, _, _ = eval_profile(profile, t)
            beta, gamma, tau = coefficients(profile, 0.0, t)
            assert beta == pytest.approx(1.0 / alpha)
            assert gamma == 0.0
            assert tau == 0.0


def test_coefficients_examples():
    beta, gamma, tau = coefficients(BoundaryProfile.affine(0.3), 0.5, 1.0)
    assert beta == pytest.approx(0.9775 / 1.3)
    assert gamma == pytest.approx(-0.3)
    assert tau == 0.0

    beta, gamma, tau = coefficients(BoundaryProfile.arctan_drift(4.0), 1.0, 0.0)
    assert beta == pytest.approx(0.75)
    assert gamma == pytest.approx(-1.0)
    assert tau == 0.0


def test_beta_bounded_below_on_grid():
    profile = BoundaryProfile.affine(0.3, m=0.2, M=0.4)
    grid = build_grid(20, 200, 1.6)
    y, t = np.meshgrid(grid.nodes, grid.times)
    beta, _, _ = coefficients(profile, y, t)
    alpha_T, _, _ = eval_profile(profile, grid.T)
    assert np.all(beta >= (1.0 - profile.M**2) / alpha_T)


def test_control_time_thresholds_values():
    t1, t2 = control_time_thresholds(0.1, 0.2)
    assert t1 == pytest.approx(15.4031, abs=1e-3)
    assert t2 == pytest.approx(14.2871, abs=1e-3)

    t1_mp, t2_mp = control_time_thresholds_mp(0.1, 0.2)
    assert t1 == pytest.approx(float(t1_mp), rel=1e-12)
    assert t2 == pytest.approx(float(t2_mp), rel=1e-12)


def test_control_time_thresholds_monotone():
    ms = np.linspace(0.05, 0.19, 100)
    t1 = np.array([control_time_thresholds(m, 0.2)[0] for m in ms])
    assert np.all(np.diff(t1) < 0)

    Ms = np.linspace(0.15, 0.6, 100)
    values = np.array([control_time_thresholds(0.1, M) for M in Ms])
    assert np.all(values > 0)
    assert np.all(np.diff(values[:, 0]) > 0)
    assert np.all(np.diff(values[:, 1]) > 0)


def test_control_time_thresholds_reject_bad_bounds():
    with pytest.raises(GeometryError):
        control_time_thresholds(0.3, 0.2)
    with pytest.raises(GeometryError):
        control_time_thresholds(0.1, 1.0)


def test_transform_zero_data():
    grid = build_grid(10, 100, 2.0)
    n = grid.Ny + 1
    out = transform_data(PhysicalData(np.zeros(n), np.zeros(n), np.zeros(5)), BoundaryProfile.affine(0.3), grid)
    assert not np.any(out.z0)
    assert not np.any(out.z1)
    assert not np.any(out.v0)
    assert out.z2.shape == grid.field_shape


def test_transform_initial_velocity_picks_up_drift():
    grid = build_grid(200, 2000, 2.0)
    y = grid.nodes
    data = PhysicalData(np.sin(np.pi * y), np.zeros_like(y), np.zeros(3))
    out = transform_data(data, BoundaryProfile.affine(0.3), grid)
    np.testing.assert_allclose(out.z0, np.sin(np.pi * y))
    np.testing.assert_allclose(out.z1, 0.3 * y * np.pi * np.cos(np.pi * y), atol=1e-3)


def test_transform_terminal_target_is_composed_with_linear_map():
    profile = BoundaryProfile.affine(0.3)
    grid = build_grid(10, 100, 2.0)
    alpha_T, _, _ = eval_profile(profile, grid.T)
    assert alpha_T == pytest.approx(1.6)
    x = np.linspace(0.0, alpha_T, 33)
    n = grid.Ny + 1
    out = transform_data(PhysicalData(np.zeros(n), np.zeros(n), x), profile, grid)
    np.testing.assert_allclose(out.v0, 1.6 * grid.nodes, atol=1e-12)


def test_transform_with_static_profile_is_identity():
    grid = build_grid(16, 64, 1.0)
    rng = np.random.default_rng(3)
    u0 = rng.standard_normal(grid.Ny + 1)
    u1 = rng.standard_normal(grid.Ny + 1)
    out = transform_data(PhysicalData(u0, u1, np.zeros(2)), BoundaryProfile.static(), grid)
    np.testing.assert_array_equal(out.z0, u0)
    np.testing.assert_array_equal(out.z1, u1)


def test_transform_rejects_wrong_sizes():
    grid = build_grid(10, 100, 2.0)
    with pytest.raises(GeometryError):
        transform_data(PhysicalData(np.zeros(5), np.zeros(11), np.zeros(3)), BoundaryProfile.affine(0.3), grid)


def test_read_columnar(tmp_path):
    path = tmp_path / "u0.txt"
    path.write_text("# n=3\n0.5\n1.5\n\n2.5\n", encoding="utf-8")
    np.testing.assert_array_equal(read_columnar(str(path)), [0.5, 1.5, 2.5])

    path.write_text("# n=4\n0.5\n", encoding="utf-8")
    with pytest.raises(GeometryError):
        read_columnar(str(path))
