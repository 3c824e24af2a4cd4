import csv
import json
from pathlib import Path

import pytest

from bprelab.cli import run_cli
from bprelab.experiments import CSV_COLUMNS, ConfigError, ExperimentConfig, load_config, run_experiment

QUICK = Path(__file__).resolve().parents[1] / "configs" / "quick"


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_missing_config_exits_2(tmp_path, capsys):
    assert run_cli(["oracle", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


@pytest.mark.parametrize(
    "raw",
    [
        {"seed": 1, "n_grid": []},
        {"seed": -1},
        {"seed": 1, "t_grid": [1.5]},
        {"seed": 1, "law": {"type": "nope"}},
        {"seed": 1, "unknown": 3},
        {"experiment": "rwre", "seed": 1},
        {"seed": 1, "replicas": 0},
    ],
)
def test_bad_configs_exit_2(tmp_path, raw):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(raw))
    assert run_cli(["oracle", "--config", str(p), "--out", str(tmp_path)]) == 2


def test_seed_is_mandatory():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({}, experiment="oracle")
    cfg = ExperimentConfig.from_dict({}, experiment="oracle", seed=3)
    assert cfg.seed == 3 and cfg.n_grid == list(range(1, 13))


def test_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{")
    with pytest.raises(ConfigError):
        load_config(p)


def test_oracle_exits_0_and_schema(tmp_path):
    assert run_cli(["oracle", "--config", str(QUICK / "oracle.json"), "--out", str(tmp_path), "-q"]) == 0
    files = sorted(p.name for p in tmp_path.iterdir())
    assert "oracle_verdicts.csv" in files and "oracle_rao_blackwell.csv" in files
    for name in files:
        if name != "oracle_verdicts.csv":
            with open(tmp_path / name) as fh:
                assert next(csv.reader(fh)) == list(CSV_COLUMNS)
    for r in _rows(tmp_path / "oracle_rao_blackwell.csv"):
        assert float(r["ci_low"]) <= float(r["estimate"]) <= float(r["ci_high"])
        assert 0 <= float(r["estimate"]) <= 1 and float(r["stderr"]) >= 0
        assert r["verdict"] == "pass"


def test_byte_identical_reruns(tmp_path):
    cfg = str(QUICK / "theorem1.json")
    for d in ("a", "b"):
        assert run_cli(["theorem1", "--config", cfg, "--seed", "77", "--replicas", "2", "--out", str(tmp_path / d), "-q"]) in (0, 1)
    a = sorted((tmp_path / "a").iterdir())
    b = sorted((tmp_path / "b").iterdir())
    assert [p.name for p in a] == [p.name for p in b]
    assert all(x.read_bytes() == y.read_bytes() for x, y in zip(a, b))


def test_workers_do_not_change_output(tmp_path):
    cfg = str(QUICK / "oracle.json")
    run_cli(["oracle", "--config", cfg, "--replicas", "2", "--out", str(tmp_path / "a"), "-q"])
    run_cli(["oracle", "--config", cfg, "--replicas", "2", "--workers", "2", "--out", str(tmp_path / "b"), "-q"])
    for x in (tmp_path / "a").iterdir():
        assert x.read_bytes() == (tmp_path / "b" / x.name).read_bytes()


def test_seed_changes_output(tmp_path):
    cfg = str(QUICK / "theorem1.json")
    run_cli(["theorem1", "--config", cfg, "--seed", "1", "--out", str(tmp_path / "a"), "-q"])
    run_cli(["theorem1", "--config", cfg, "--seed", "2", "--out", str(tmp_path / "b"), "-q"])
    assert (tmp_path / "a" / "theorem1_extinction.csv").read_bytes() != (tmp_path / "b" / "theorem1_extinction.csv").read_bytes()


def test_json_output(tmp_path):
    assert run_cli(["oracle", "--config", str(QUICK / "oracle.json"), "--format", "json", "--out", str(tmp_path), "-q"]) == 0
    doc = json.loads((tmp_path / "oracle.json").read_text())
    assert doc["passed"] is True and doc["experiment"] == "oracle"
    assert all("n_samples" in r for r in doc["tables"]["direct"])
    assert "wall_time" not in doc


def test_verdict_failure_exits_1(tmp_path):
    raw = json.loads((QUICK / "theorem1.json").read_text())
    raw["thresholds"] = {"slope_tol": 1e-9}
    p = tmp_path / "c.json"
    p.write_text(json.dumps(raw))
    assert run_cli(["theorem1", "--config", str(p), "--out", str(tmp_path / "o"), "-q"]) == 1
    rows = _rows(tmp_path / "o" / "theorem1_verdicts.csv")
    slope = [r for r in rows if r["name"] == "slope"][0]
    assert slope["passed"] == "fail" and slope["tolerance"] == "+-1e-09"


@pytest.mark.parametrize("name", ["theorem3", "theorem5", "overshoot", "contrast", "rwre"])
def test_quick_configs_run(name):
    cfg = load_config(QUICK / f"{name}.json")
    rec = run_experiment(cfg)
    assert rec.tables and rec.verdicts
    for table, rows in rec.tables.items():
        for r in rows:
            if r.ci_low is not None and r.estimate is not None:
                assert r.ci_low <= r.estimate <= r.ci_high, (table, r)


def test_theorem5_t0_point_mass():
    raw = json.loads((QUICK / "theorem5.json").read_text())
    raw["t_grid"] = [0.0, 1.0]
    raw["budget"] = {"n_envs": 20_000, "n_meander": 2000}
    rec = run_experiment(ExperimentConfig.from_dict(raw))
    (row,) = rec.tables["marginal_t0"]
    assert row.estimate == 1.0 and row.verdict == "pass"
