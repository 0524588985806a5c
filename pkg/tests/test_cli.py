import csv
import json

import numpy as np
import pytest

from nnerror import checkpoint
from nnerror.cli import build_parser, main, resolve_config
from nnerror.harness import ExperimentConfig, primary_setup
from nnerror.solver import train

SMALL = ["--K", "40", "--T", "1.0", "--M", "10", "--k", "3", "--width", "8"]


def run(capsys, *argv):
    assert main(list(argv)) == 0
    return json.loads(capsys.readouterr().out)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_flags_override_config_file(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("K = 123\nT = 4.0\nsystem = henon-heiles\n")
    args = build_parser().parse_args(["train", "--config", str(cfg), "--T", "2.0"])
    config = resolve_config(args)
    assert config.K == 123 and config.T == 2.0 and config.system == "henon-heiles"


def test_train_matches_study_seed(tmp_path, capsys):
    out = run(capsys, "train", *SMALL, "--seed", "4", "--out", str(tmp_path))
    assert out["iterations"] == 40
    s, system = checkpoint.load_solver(tmp_path / "solver.npz")
    sys_, ref, rng, _ = primary_setup(ExperimentConfig(K=40, T=1.0, M=10, k=3, width=8), 4)
    train(ref, sys_, 40, rng)
    assert system == "nl-osc" and np.array_equal(s.net.flatten(), ref.net.flatten())
    rows = read_csv(tmp_path / "trajectory.csv")
    assert len(rows) == 2001 and list(rows[0]) == ["t", "zhat_1", "zhat_2"]


def test_train_with_explicit_initial_condition(tmp_path, capsys):
    out = run(capsys, "train", *SMALL, "--z0", "1", "0", "--out", str(tmp_path))
    assert out["z0"] == [1.0, 0.0]


def test_quantify_then_correct(tmp_path, capsys):
    run(capsys, "train", *SMALL, "--out", str(tmp_path))
    q = run(capsys, "quantify", *SMALL, "--out", str(tmp_path))
    assert q["grid_points"] == 31 and q["bound"] == pytest.approx(q["l_max"] / q["sigma_min"])
    assert 0 <= q["discrepancy"]
    assert list(read_csv(tmp_path / "errors.csv")[0]) == ["t", "dz_internal_1", "dz_internal_2",
                                                          "dz_external_1", "dz_external_2"]
    c = run(capsys, "correct", *SMALL, "--iters", "15", "--dataset", str(tmp_path / "dataset.csv"),
            "--out", str(tmp_path))
    assert c["mode"] == "regression" and c["iterations"] == 15
    assert (tmp_path / "corrected.npz").exists()
    r = run(capsys, "correct", *SMALL, "--iters", "15", "--mode", "residual", "--out", str(tmp_path))
    assert r["mode"] == "residual" and r["dz_avg_before"] == c["dz_avg_before"]


def test_quantify_without_reference(tmp_path, capsys):
    run(capsys, "train", *SMALL, "--out", str(tmp_path))
    q = run(capsys, "quantify", *SMALL, "--no-reference", "--out", str(tmp_path))
    assert "discrepancy" not in q and not (tmp_path / "errors.csv").exists()


def test_study_outputs(tmp_path, capsys):
    out = run(capsys, "study", *SMALL, "--iters", "10", "--runs", "2", "--arms", "standard,alg1",
              "--out", str(tmp_path))
    assert out["medians"]["standard"]["runs"] == 2 and out["failures"] == []
    rows = read_csv(tmp_path / "study.csv")
    assert len(rows) == 4
    assert {"arm", "seed", "tau", "dz_avg", "dz_max", "bound", "discrepancy"} <= set(rows[0])
    for name in ("medians.csv", "medians.png", "trajectory_0.csv", "trajectory_1.png", "errors_0.csv",
                 "errors_1.png"):
        assert (tmp_path / name).stat().st_size > 0
    assert (tmp_path / "trajectory_0.png").read_bytes()[:4] == b"\x89PNG"


def test_study_without_figures(tmp_path, capsys):
    run(capsys, "study", *SMALL, "--iters", "5", "--runs", "1", "--no-figures", "--out", str(tmp_path))
    assert not list(tmp_path.glob("*.png")) and (tmp_path / "study.csv").exists()


def test_unknown_system_rejected():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["train", "--system", "lorenz"])
