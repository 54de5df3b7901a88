"""Basic unit tests for configuration loading and problem builders."""
import numpy as np
import pytest

from stackwave.config import (
    ConfigError,
    config_hash,
    configure_experiment,
    evaluate_slice,
    expand_sweep,
    load_config,
    make_follower_problem,
    make_leader_problem,
    make_profile,
)
from stackwave.geometry import ProfileKind, Side

CONFIG = """\
[profile]
kind = arctan
parameter = 4
m = 0.24
M = 0.51

[grid]
Ny = 8
Nt = 40
T = 2.0

[control]
side = gamma_alpha
mu = 50
epsilon = 0.05

[targets]
v0 = sin:1:0.1
z4 = poly:0,1,-1

[flags]
dense_oracle = yes

[output]
seed = 7
"""


def _write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_defaults_are_valid():
    cfg = configure_experiment()
    assert (cfg.Ny, cfg.Nt, cfg.T) == (16, 160, 1.6)
    assert cfg.side == "gamma0"
    assert cfg.sigma == 100.0 and cfg.mu == 100.0
    assert cfg.threshold_policy == "warn"


@pytest.mark.parametrize(
    "kwargs",
    [
        {"bogus": 1},
        {"side": "left"},
        {"profile_kind": "custom"},
        {"profile_kind": "cubic"},
        {"m": 0.1},
        {"sigma": 0.0},
        {"epsilon": float("nan")},
        {"margin": 1.0},
        {"frame": "lab"},
        {"threshold_policy": "panic"},
        {"z2": "cos:1"},
        {"v0": "sin:x"},
        {"seed": -1},
        {"sweep": {"nonsense": [1]}},
        {"sweep": {"epsilon": []}},
    ],
)
def test_invalid_settings_are_rejected(kwargs):
    with pytest.raises(ConfigError):
        configure_experiment(**kwargs)


def test_cfl_violation_is_a_config_error():
    with pytest.raises(ConfigError, match="Nt >= 500"):
        configure_experiment(Ny=100, Nt=100, T=2.0)


def test_load_config_sections(tmp_path):
    cfg = load_config(_write(tmp_path, CONFIG))
    assert cfg.profile_kind == "arctan"
    assert cfg.profile_parameter == 4.0
    assert (cfg.m, cfg.M) == (0.24, 0.51)
    assert (cfg.Ny, cfg.Nt, cfg.T) == (8, 40, 2.0)
    assert cfg.side == "gamma_alpha"
    assert cfg.mu == 50.0
    assert cfg.dense_oracle is True
    assert cfg.seed == 7
    assert make_profile(cfg).kind is ProfileKind.ARCTAN_DRIFT


def test_load_config_overrides(tmp_path):
    cfg = load_config(_write(tmp_path, CONFIG), seed=3, out_dir=str(tmp_path / "out"), allow_degenerate=None)
    assert cfg.seed == 3
    assert cfg.out_dir == str(tmp_path / "out")
    assert cfg.allow_degenerate is False


@pytest.mark.parametrize(
    "text",
    [
        "[grid]\nNy = 8\nNt = 40\nT = 2.0\n[extras]\nfoo = 1\n",
        "[grid]\nNy = 8\nNt = 40\nT = 2.0\nny = 9\n",
        "[grid]\nNy = eight\n",
        "[flags]\ndense_oracle = maybe\n",
        "[sweep]\nsize = 1, 2\n",
        "no section header\n",
    ],
)
def test_load_config_rejects_bad_files(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, text))


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.ini"))


def test_sweep_expansion_order(tmp_path):
    text = "[grid]\nNy = 8\nNt = 40\nT = 2.0\n[sweep]\nepsilon = 0.01, 0.001\nNt = 40, 80\n"
    cfg = load_config(_write(tmp_path, text))
    assert cfg.sweep == {"epsilon": [0.01, 0.001], "Nt": [40, 80]}
    expanded = expand_sweep(cfg)
    assert [(c.epsilon, c.Nt) for c in expanded] == [(0.01, 40), (0.01, 80), (0.001, 40), (0.001, 80)]
    assert all(not c.sweep for c in expanded)
    assert expand_sweep(configure_experiment()) == [configure_experiment()]


def test_sweep_values_are_validated(tmp_path):
    text = "[grid]\nNy = 8\nNt = 40\nT = 2.0\n[sweep]\nNy = 8, 200\n"
    cfg = load_config(_write(tmp_path, text))
    with pytest.raises(ConfigError):
        expand_sweep(cfg)


def test_config_hash_is_stable():
    a = configure_experiment(Ny=8, Nt=40, T=2.0)
    b = configure_experiment(T=2.0, Nt=40, Ny=8)
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(configure_experiment(Ny=8, Nt=40, T=2.0, seed=1))
    assert len(config_hash(a)) == 64


def test_evaluate_slice_kinds(tmp_path):
    y = np.linspace(0.0, 1.0, 5)
    np.testing.assert_array_equal(evaluate_slice("zero", y), np.zeros(5))
    np.testing.assert_allclose(evaluate_slice("sin:2:0.5", y), 0.5 * np.sin(2 * np.pi * y))
    np.testing.assert_allclose(evaluate_slice("poly:1,2", y), 1.0 + 2.0 * y)

    path = tmp_path / "slice.txt"
    path.write_text("# n=3\n0\n1\n0\n", encoding="utf-8")
    np.testing.assert_allclose(evaluate_slice(f"file:{path}", y), [0.0, 0.5, 1.0, 0.5, 0.0])
    with pytest.raises(ConfigError):
        evaluate_slice(f"file:{tmp_path / 'absent.txt'}", y)


def test_follower_problem_uses_side_penalty_and_target():
    cfg = configure_experiment(Ny=8, Nt=40, T=2.0, sigma=10.0, mu=20.0, z2="sin:1", z4="poly:0,1,-1")
    left = make_follower_problem(cfg)
    assert left.side is Side.GAMMA_0
    assert left.penalty == 10.0
    np.testing.assert_allclose(left.tracking_target[5], np.sin(np.pi * left.grid.nodes))

    right = make_follower_problem(cfg, side=Side.GAMMA_ALPHA)
    assert right.penalty == 20.0
    y = right.grid.nodes
    np.testing.assert_allclose(right.tracking_target[-1], y - y * y)


def test_leader_problem_carries_targets_and_settings():
    cfg = configure_experiment(Ny=8, Nt=40, T=2.0, v0="sin:1:0.1", v1="sin:2", epsilon=0.05, leader_tol=1e-6)
    problem = make_leader_problem(cfg)
    y = problem.grid.nodes
    np.testing.assert_allclose(problem.v0, 0.1 * np.sin(np.pi * y))
    np.testing.assert_allclose(problem.v1, np.sin(2 * np.pi * y))
    assert problem.epsilon == 0.05
    assert problem.settings.tol == 1e-6


def test_physical_frame_transforms_initial_velocity():
    cfg = configure_experiment(Ny=32, Nt=80, T=1.0, z0="sin:1", frame="physical")
    problem = make_follower_problem(cfg)
    y = problem.grid.nodes
    np.testing.assert_allclose(problem.z0, np.sin(np.pi * y), atol=1e-12)
    np.testing.assert_allclose(problem.z1, 0.3 * y * np.pi * np.cos(np.pi * y), atol=5e-2)


def test_physical_frame_samples_terminal_target_on_final_interval():
    cfg = configure_experiment(Ny=32, Nt=200, T=2.0, v0="poly:0,1", frame="physical")
    problem = make_leader_problem(cfg)
    y = problem.grid.nodes
    # alpha(T) = 1.6, so u(x) = x pulls back to 1.6 y
    np.testing.assert_allclose(problem.v0, 1.6 * y, atol=1e-12)


@pytest.mark.parametrize("side, key", [(Side.GAMMA_0, "z2"), (Side.GAMMA_ALPHA, "z4")])
def test_physical_frame_pulls_back_tracking_rows(side, key):
    cfg = configure_experiment(Ny=32, Nt=200, T=2.0, frame="physical", **{key: "poly:0,1"})
    problem = make_follower_problem(cfg, side=side)
    grid = problem.grid
    alphas = 1.0 + 0.3 * grid.times
    np.testing.assert_allclose(problem.tracking_target, np.outer(alphas, grid.nodes), atol=1e-12)
