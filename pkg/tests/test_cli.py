import json

import pytest

from seqjde.cli import main


@pytest.fixture(scope="module")
def config_path(tmp_path_factory):
    # tiny but real shift-in-mean design so CLI runs stay fast
    cfg = {
        "model": {
            "type": "shift_in_mean",
            "sigma2": 4.0,
            "gamma_shape": 1.7,
            "gamma_scale": 1.0,
            "p0": 0.5,
        },
        "grid": {
            "x": {"lo": -12.0, "hi": 12.0, "n": 241},
            "theta": {"lo": -12.0, "hi": 12.0, "n": 241},
            "t": {"lo": -7.0, "hi": 7.0, "n": 71},
            "horizon": 6,
        },
        "constraints": {
            "kappa": [0.15, 0.15, 0.8, 0.8],
            "solver": "lp",
            "tol": 1e-9,
            "leakage_tol": 0.05,
        },
        "seed": 7,
        "runs": 2000,
    }
    path = tmp_path_factory.mktemp("cfg") / "mean.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def artifact(config_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("art") / "design.json"
    assert main(["design", "--config", str(config_path), "--out", str(out)]) == 0
    return out


def test_design_prints_objective(config_path, tmp_path, capsys):
    out = tmp_path / "d.json"
    code = main(["design", "--config", str(config_path), "--out", str(out)])
    captured = capsys.readouterr()
    assert code == 0
    assert "dual objective" in captured.out
    assert out.exists()


def test_design_deterministic(config_path, tmp_path, artifact):
    out = tmp_path / "again.json"
    assert main(["design", "--config", str(config_path), "--out", str(out)]) == 0
    assert out.read_bytes() == artifact.read_bytes()


def test_verify_fresh_artifact(artifact, capsys):
    code = main(["verify", "--test", str(artifact)])
    captured = capsys.readouterr()
    assert "bellman_residual" in captured.out
    assert code == 0, captured.out


def test_simulate(artifact, tmp_path, capsys):
    out = tmp_path / "report.json"
    code = main(
        [
            "simulate",
            "--test",
            str(artifact),
            "--runs",
            "2000",
            "--seed",
            "5",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    rep = json.loads(out.read_text())
    for key in (
        "alpha0",
        "alpha1",
        "mse0",
        "mse1",
        "mean_tau",
        "mean_tau_h0",
        "mean_tau_h1",
        "truncation_rate",
        "runs",
        "seed",
    ):
        assert key in rep
    assert rep["runs"] == 2000 and rep["seed"] == 5
    capsys.readouterr()


def test_simulate_zero_runs_is_config_error(artifact):
    assert main(["simulate", "--test", str(artifact), "--runs", "0"]) == 2


def test_baseline_sprt(config_path, tmp_path, capsys):
    out = tmp_path / "sprt.json"
    code = main(
        [
            "baseline-sprt",
            "--config",
            str(config_path),
            "--runs",
            "2000",
            "--seed",
            "5",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    rep = json.loads(out.read_text())
    assert 0.0 <= rep["alpha0"] <= 1.0
    capsys.readouterr()


def test_regions_export(artifact, tmp_path, capsys):
    out = tmp_path / "regions.csv"
    assert main(["regions", "--test", str(artifact), "--out", str(out)]) == 0
    header = out.read_text().splitlines()[0]
    assert header == "n,t_index,t_value,label"
    capsys.readouterr()


def test_usage_errors(config_path, capsys):
    assert main(["frobnicate"]) == 2
    assert main(["design", "--config", str(config_path)]) == 2  # missing --out
    assert main(["design", "--config", "/nope.json", "--out", "/tmp/x.json"]) == 2
    capsys.readouterr()


def test_config_errors_name_fields(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"type": "shift_in_mean"}}))
    assert main(["design", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "model.sigma2" in err

    cfg = {
        "model": {
            "type": "shift_in_mean",
            "sigma2": 4.0,
            "gamma_shape": 1.7,
            "gamma_scale": 1.0,
            "p0": 0.5,
        },
        "grid": {
            "x": {"lo": -12.0, "hi": 12.0, "n": 101},
            "theta": {"lo": -12.0, "hi": 12.0},
            "t": {"lo": -7.0, "hi": 7.0, "n": 41},
            "horizon": 3,
        },
        "constraints": {"kappa": [0.1, 0.1, 0.5, 0.5]},
    }
    bad.write_text(json.dumps(cfg))
    assert main(["design", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "grid.theta.n" in capsys.readouterr().err

    cfg["grid"]["theta"]["n"] = 101
    cfg["constraints"]["kappa"] = [0.1, 0.1]
    bad.write_text(json.dumps(cfg))
    assert main(["design", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "kappa" in capsys.readouterr().err
