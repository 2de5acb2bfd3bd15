import csv
import filecmp
import json
from importlib import resources

import numpy as np
import pytest

from lqg_deceive.cli import main
from lqg_deceive.config import ConfigError, ExperimentConfig, validate
from lqg_deceive.experiments import plotdata, reproduce


@pytest.fixture
def default_raw():
    return json.loads(resources.files("lqg_deceive").joinpath("data/vehicle6.json").read_text())


@pytest.fixture
def config_file(tmp_path, default_raw):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(default_raw))
    return path


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_solve_writes_policy(tmp_path, config_file, capsys):
    code, out, _ = run(["solve", "--config", config_file, "--out", tmp_path / "o"], capsys)
    assert code == 0
    pol = json.loads((tmp_path / "o" / "policy.json").read_text())
    K = np.array(pol["K"])
    assert np.allclose(np.diag(K[:, :3]), -0.5316, atol=1e-3)
    assert np.allclose(np.diag(K[:, 3:]), -0.97, atol=1e-3)
    # d = 0 in this config
    assert pol["k"] == [0.0, 0.0, 0.0]
    assert set(json.loads((tmp_path / "o" / "value.json").read_text())) == {"P", "h", "l"}
    assert json.loads(out)["command"] == "solve"


def test_missing_config(tmp_path, capsys):
    code, _, err = run(["solve", "--config", tmp_path / "nope.json", "--out", tmp_path / "o"], capsys)
    assert code == 2
    payload = json.loads(err.strip().splitlines()[-1])
    assert "config not found" in payload["message"]
    assert json.loads((tmp_path / "o" / "error.json").read_text())["exit_code"] == 2


def test_unknown_key_rejected(tmp_path, default_raw, capsys):
    default_raw["cost"]["Q"] = 1.0
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(default_raw))
    code, _, err = run(["solve", "--config", path], capsys)
    assert code == 2 and "unknown keys in cost: Q" in err


def test_bad_argument_is_structured(capsys):
    code, _, err = run(["solve"], capsys)
    assert code == 2
    assert json.loads(err.strip())["error"] == "ConfigError"


def test_module_error_exit_code(tmp_path, default_raw, capsys):
    default_raw["target"]["K"] = (0.5 * np.ones((3, 6))).tolist()
    path = tmp_path / "bad_target.json"
    path.write_text(json.dumps(default_raw))
    code, _, err = run(["attack", "--config", path, "--out", tmp_path / "a"], capsys)
    assert code == 1
    payload = json.loads(err.strip().splitlines()[-1])
    assert payload["error"] == "ParameterError" and "stabilizing" in payload["message"]


def test_feasibility_grid_flag(tmp_path, config_file, capsys):
    code, _, _ = run(["feasibility", "--config", config_file, "--out", tmp_path, "--grid", 64], capsys)
    assert code == 0
    rep = json.loads((tmp_path / "feasibility.json").read_text())
    assert rep["grid_size"] == 64 and len(rep["omega"]) == 64
    assert rep["verdict"] == "feasible_evidence"


def test_attack_dump_problem(tmp_path, config_file, capsys):
    dump = tmp_path / "prob.json"
    code, _, _ = run(["attack", "--config", config_file, "--out", tmp_path, "--dump-problem", dump], capsys)
    assert code == 0 and dump.exists()
    sol = json.loads((tmp_path / "attack_solution.json").read_text())
    assert sol["certified"] and abs(sol["objective"] - 1.8137) < 0.02


def test_bounds_and_seed_override(tmp_path, config_file, capsys, monkeypatch):
    monkeypatch.setenv("LQG_DECEIVE_LOG", "debug")
    code, _, _ = run(["bounds", "--config", config_file, "--out", tmp_path, "--seed", 11], capsys)
    assert code == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["overrides"] == {"seed": 11}
    b = json.loads((tmp_path / "bounds.json").read_text())
    assert b["verification"]["violations"] == 0
    assert b["bounds"]["gamma2"] == "inapplicable"


def test_plotdata_errors(tmp_path, capsys):
    code, _, err = run(["plotdata", tmp_path / "missing"], capsys)
    assert code == 1 and json.loads(err.strip())["error"] == "LQGError"
    (tmp_path / "empty").mkdir()
    code, _, err = run(["plotdata", tmp_path / "empty"], capsys)
    assert code == 1 and "no batch or ADP traces" in err


def test_schema_types(default_raw):
    default_raw["gamma"] = "0.9"
    with pytest.raises(ConfigError, match="gamma"):
        validate(default_raw)
    default_raw["gamma"] = 1.0
    with pytest.raises(ConfigError, match="gamma"):
        validate(default_raw)


def test_schema_required(default_raw):
    del default_raw["cost"]
    with pytest.raises(ConfigError, match="missing required keys: cost"):
        validate(default_raw)


def test_matrix_from_file(tmp_path, default_raw):
    (tmp_path / "A.json").write_text(json.dumps(default_raw["system"]["A"]))
    default_raw["system"]["A"] = "A.json"
    (tmp_path / "cfg.json").write_text(json.dumps(default_raw))
    cfg = ExperimentConfig.load(tmp_path / "cfg.json")
    assert cfg.system.A[3, 3] == 0.95


def test_digest_tracks_content(default_raw):
    a = ExperimentConfig.from_dict(default_raw)
    default_raw["gamma"] = 0.8
    assert a.digest() != ExperimentConfig.from_dict(default_raw).digest()
    assert a.digest() == ExperimentConfig.default().digest()


@pytest.fixture(scope="module")
def reproduced(tmp_path_factory):
    out = tmp_path_factory.mktemp("run_a")
    summary = reproduce(ExperimentConfig.default(), out)
    return out, summary


def test_reproduce_is_deterministic(reproduced, tmp_path_factory):
    out_a, summary = reproduced
    assert summary.all_pass, [c.name for c in summary.checks if not c.passed]
    out_b = tmp_path_factory.mktemp("run_b")
    reproduce(ExperimentConfig.default(), out_b)
    for name in ["table_policies.json", "attack_solution.json", "summary.json", "manifest.json",
                 "batch_run/summary.json", "adp_run/summary.json", "adp_run/attacked_policies.json"]:
        assert filecmp.cmp(out_a / name, out_b / name, shallow=False), name


def test_plotdata_series(reproduced):
    out, _ = reproduced
    written = plotdata(out)
    assert written["batch_run/cost_comparison.csv"] == 400
    with open(out / "adp_run" / "attacked_distances.csv") as fh:
        rows = list(csv.DictReader(fh))
    dist = np.array([float(r["K_dist_target_F"]) for r in rows])
    # from its peak the distance falls monotonically until it reaches the noise floor
    floor = 1e-2
    peak = int(np.argmax(dist))
    below = peak + int(np.argmax(dist[peak:] < floor))
    assert below > peak
    assert np.all(np.diff(dist[peak : below + 1]) < 0)
    assert np.all(dist[below:] < floor)
    with open(out / "batch_run" / "cost_comparison.csv") as fh:
        first = next(csv.DictReader(fh))
    assert float(first["difference"]) == pytest.approx(float(first["c_dagger"]) - float(first["c"]))


def test_stage_failure_skips_rest(tmp_path, default_raw):
    default_raw["target"]["K"] = (0.5 * np.ones((3, 6))).tolist()
    summary = reproduce(ExperimentConfig.from_dict(default_raw), tmp_path)
    assert summary.stages["solve"]["status"] == "ok"
    assert summary.stages["attack"]["status"] == "failed"
    assert all(summary.stages[s]["status"] == "skipped" for s in ["feasibility", "bounds", "batch", "adp"])
    assert not summary.all_pass
    assert json.loads((tmp_path / "summary.json").read_text())["all_pass"] is False
