"""Basic unit tests for the command-line front-end."""
import csv

import pytest

from stackwave.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, EXIT_VERIFY, main

SMALL = "[grid]\nNy = 8\nNt = 16\nT = 0.75\n"


def _config(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text, encoding="utf-8")
    return str(path)


def _rows(path):
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.reader(f))


def test_thresholds_command(tmp_path):
    cfg = _config(tmp_path, "[profile]\nkind = affine\nparameter = 0.15\nm = 0.1\nM = 0.2\n")
    out = tmp_path / "out"
    assert main(["thresholds", "--config", cfg, "--out", str(out)]) == EXIT_OK
    header, row = _rows(out / "thresholds.csv")
    assert header == ["m", "M", "T1", "T2"]
    values = [float(v) for v in row]
    assert values[:2] == [0.1, 0.2]
    assert values[2] == pytest.approx(15.4031, abs=1e-3)
    assert values[3] == pytest.approx(14.2871, abs=1e-3)
    manifest = (out / "manifest.txt").read_text(encoding="utf-8").splitlines()
    assert manifest[0].startswith("tool=stackwave ")
    assert manifest[1].startswith("config_sha256=")
    assert manifest[2:] == ["artifact=thresholds.csv"]


def test_validate_command(tmp_path):
    out = tmp_path / "out"
    assert main(["validate", "--out", str(out)]) == EXIT_OK
    header, row = _rows(out / "hypotheses.csv")
    assert header[:3] == ["h1", "h2", "h3"]
    assert row[:3] == ["true", "true", "true"]


def test_degenerate_profile_needs_flag(tmp_path):
    text = "[profile]\nparameter = 0\n[grid]\nNy = 100\nNt = 500\nT = 1.0\n[targets]\nz0 = sin:1\n"
    cfg = _config(tmp_path, text)
    out = tmp_path / "out"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == EXIT_CONFIG
    assert main(["simulate", "--config", cfg, "--out", str(out), "--allow-degenerate"]) == EXIT_OK
    rows = _rows(out / "simulate.csv")
    assert rows[0] == ["level", "t", "alpha", "l2_norm", "exact_error"]
    assert len(rows) == 502
    assert float(rows[-1][4]) < 5e-3
    assert (out / "state.field").exists()
    assert (out / "terminal_position.slice").exists()


def test_follower_command_writes_artifacts(tmp_path):
    cfg = _config(tmp_path, SMALL + "[targets]\nz2 = sin:1\n")
    out = tmp_path / "out"
    assert main(["follower", "--config", cfg, "--out", str(out)]) == EXIT_OK
    for name in ("follower.trace", "state.field", "adjoint.field", "report.csv"):
        assert (out / "follower" / name).exists()
    report = dict(_rows(out / "follower" / "report.csv")[1:])
    assert float(report["cost"]) > 0.0
    assert float(report["characterization_sign"]) == -1.0
    manifest = (out / "manifest.txt").read_text(encoding="utf-8")
    assert "artifact=follower/report.csv" in manifest


def test_verify_passes_and_is_deterministic(tmp_path):
    cfg = _config(tmp_path, SMALL)
    first = tmp_path / "a"
    second = tmp_path / "b"
    assert main(["verify", "--config", cfg, "--out", str(first), "--dense-oracle"]) == EXIT_OK
    assert main(["verify", "--config", cfg, "--out", str(second), "--dense-oracle"]) == EXIT_OK
    a = (first / "verify.csv").read_bytes()
    assert a == (second / "verify.csv").read_bytes()
    assert b"\r" not in a
    rows = _rows(first / "verify.csv")
    assert all(row[-1] == "true" for row in rows[1:])
    assert {row[0] for row in rows[1:]} >= {"transpose_pairing", "A_Astar_pairing", "duality_gap", "dense_A_adjoint"}
    assert (first / "oracle_report.csv").exists()


def test_verify_reports_failed_identities(tmp_path):
    cfg = _config(tmp_path, SMALL + "[solver]\nfixed_point_tol = 0.5\n")
    out = tmp_path / "out"
    assert main(["verify", "--config", cfg, "--out", str(out)]) == EXIT_VERIFY
    rows = _rows(out / "verify.csv")
    failed = {row[0] for row in rows[1:] if row[-1] == "false"}
    assert "A_Astar_pairing" in failed
    assert (out / "manifest.txt").exists()


def test_config_errors_exit_with_one(tmp_path):
    cfg = _config(tmp_path, "[grid]\nNy = 100\nNt = 100\nT = 2.0\n")
    assert main(["validate", "--config", cfg, "--out", str(tmp_path / "out")]) == EXIT_CONFIG
    cfg = _config(tmp_path, "[nonsense]\nkey = 1\n")
    assert main(["validate", "--config", cfg]) == EXIT_CONFIG
    assert main(["sweep", "--config", _config(tmp_path, SMALL), "--out", str(tmp_path / "out")]) == EXIT_CONFIG
    assert main(["validate", "--jobs", "0", "--out", str(tmp_path / "out")]) == EXIT_CONFIG


def test_threshold_policy_error(tmp_path):
    cfg = _config(tmp_path, SMALL + "[flags]\nthreshold_policy = error\n")
    assert main(["leader", "--config", cfg, "--out", str(tmp_path / "out")]) == EXIT_CONFIG


def test_solver_errors_exit_with_two(tmp_path):
    cfg = _config(tmp_path, SMALL + "[targets]\nz2 = sin:1\n[solver]\nfollower_max_iter = 1\n")
    assert main(["follower", "--config", cfg, "--out", str(tmp_path / "out")]) == EXIT_SOLVER


def test_sweep_command(tmp_path):
    text = SMALL + "[targets]\nv0 = sin:1:0.1\n[sweep]\nepsilon = 0.05, 0.02\n"
    cfg = _config(tmp_path, text)
    out = tmp_path / "out"
    assert main(["sweep", "--config", cfg, "--out", str(out), "--jobs", "2"]) == EXIT_OK
    rows = _rows(out / "sweep.csv")
    assert rows[0][:3] == ["instance", "epsilon", "status"]
    assert [row[0] for row in rows[1:]] == ["0", "1"]
    assert [float(row[1]) for row in rows[1:]] == [0.05, 0.02]


def test_non_finite_initial_data_is_a_solver_error(tmp_path, capsys):
    data = tmp_path / "z0.txt"
    data.write_text("# n=3\n0.0\nnan\n0.0\n", encoding="utf-8")
    cfg = _config(tmp_path, SMALL + f"[targets]\nz0 = file:{data}\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "out")]) == EXIT_SOLVER
    assert "time level 0" in capsys.readouterr().err
