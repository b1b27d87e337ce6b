import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from arspo_lab import cli, group_norm

CONFIGS = Path(__file__).parent.parent / "configs"


def write(tmp_path, name, **training):
    data = {
        "environments": {"cls": {"kind": "classification-bandit", "classes": 2, "seed": 1},
                         "vid": {"kind": "interval-grid-localization", "resolution": 12, "seed": 2}},
        "tasks": {"cls": {}, "vid": {}},
        "dca": {"t_warm": 4, "t_window": 2},
        "training": {"steps": 12, "step_size": 0.2, "seed": 0, **training},
    }
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


@pytest.fixture(autouse=True)
def isolated(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(cli.OUT_ENV_VAR, raising=False)


def test_verify_single_suite(capsys):
    assert cli.main(["verify", "--suite", "jacobian"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] and list(report["suites"]) == ["jacobian"]
    check = report["suites"]["jacobian"]["checks"][0]
    assert {"name", "error", "tolerance", "passed"} <= set(check)


def test_verify_unknown_suite_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["verify", "--suite", "everything"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_verify_detects_a_broken_jacobian(monkeypatch, capsys):
    real = group_norm.advantage_jacobian

    def mutated(group):
        jac = real(group).copy()
        jac[0, 1] *= 1.01
        return jac

    monkeypatch.setattr(group_norm, "advantage_jacobian", mutated)
    assert cli.main(["verify", "--suite", "jacobian"]) == 1
    captured = capsys.readouterr()
    report = json.loads(captured.out)
    failing = [c for c in report["suites"]["jacobian"]["checks"] if not c["passed"]]
    assert failing and all(c["entry"] == "J[0][1]" for c in failing if "entry" in c)
    assert "J[0][1]" in captured.err


def test_run_zero_steps(tmp_path):
    cfg = write(tmp_path, "c.yaml", steps=0)
    assert cli.main(["run", "--config", str(cfg), "--out", "out"]) == 0
    lines = (tmp_path / "out" / "trace_seed0.csv").read_text().splitlines()
    assert lines[0] == "step,task,H,l,objective,grad_norm,branch"
    assert len(lines) == 3 and all(l.startswith("0,") for l in lines[1:])
    summary = json.loads((tmp_path / "out" / "summary_seed0.json").read_text())
    assert summary["schema_version"] == 1 and summary["steps"] == 0


def test_run_seed_list_writes_one_file_per_seed(tmp_path):
    cfg = write(tmp_path, "c.yaml", seed=[3, 5])
    assert cli.main(["run", "--config", str(cfg), "--out", "out", "--workers", "2"]) == 0
    names = sorted(p.name for p in (tmp_path / "out").iterdir())
    assert names == ["dca_seed3.csv", "dca_seed5.csv", "summary_seed3.json", "summary_seed5.json",
                     "trace_seed3.csv", "trace_seed5.csv"]


def test_run_is_byte_identical_and_independent_of_workers(tmp_path):
    cfg = write(tmp_path, "c.yaml", seed=[1, 2])
    cli.main(["run", "--config", str(cfg), "--out", "a", "--workers", "1"])
    cli.main(["run", "--config", str(cfg), "--out", "b", "--workers", "2"])
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_seeds_flag_overrides_config(tmp_path):
    cfg = write(tmp_path, "c.yaml")
    assert cli.main(["run", "--config", str(cfg), "--out", "o", "--seeds", "9"]) == 0
    assert (tmp_path / "o" / "trace_seed9.csv").exists()
    assert cli.main(["run", "--config", str(cfg), "--out", "o", "--seeds", "x,y"]) == 2


def test_missing_config_file(capsys):
    assert cli.main(["run", "--config", "nope.yaml"]) == 2
    assert "nope.yaml" in capsys.readouterr().err


def test_invalid_config_names_field(tmp_path, capsys):
    cfg = write(tmp_path, "c.yaml", step_size=-1.0)
    assert cli.main(["run", "--config", str(cfg)]) == 2
    assert "training.step_size" in capsys.readouterr().err


def test_non_finite_run_exits_3(tmp_path, monkeypatch, capsys):
    import arspo_lab.train as train_mod
    monkeypatch.setattr(train_mod, "objective_gradient", lambda *a, **k: np.full(a[3].layout.size, np.nan))
    cfg = write(tmp_path, "c.yaml")
    assert cli.main(["run", "--config", str(cfg), "--out", "o"]) == 3
    assert "step 1" in capsys.readouterr().err


def test_output_directory_precedence(tmp_path, monkeypatch):
    cfg = write(tmp_path, "c.yaml", steps=0)
    assert cli.main(["run", "--config", str(cfg)]) == 0
    assert (tmp_path / "runs" / "trace_seed0.csv").exists()

    monkeypatch.setenv(cli.OUT_ENV_VAR, str(tmp_path / "env_out"))
    cli.main(["run", "--config", str(cfg)])
    assert (tmp_path / "env_out" / "trace_seed0.csv").exists()

    data = yaml.safe_load(cfg.read_text())
    data["output"] = {"directory": str(tmp_path / "cfg_out")}
    cfg.write_text(yaml.safe_dump(data))
    cli.main(["run", "--config", str(cfg)])
    assert (tmp_path / "cfg_out" / "trace_seed0.csv").exists()

    cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "flag_out")])
    assert (tmp_path / "flag_out" / "trace_seed0.csv").exists()


def test_compare_identical_configs(tmp_path, capsys):
    cfg = write(tmp_path, "c.yaml", seed=[0, 1])
    assert cli.main(["compare", "--config", str(cfg), "--config", str(cfg), "--out", "cmp"]) == 0
    report = json.loads((tmp_path / "cmp" / "comparison.json").read_text())
    assert report["schema_version"] == 1
    assert report["hard_task"] == "vid"
    assert report["seeds"] == [0, 1]
    for run in report["runs"]:
        assert all(v == 0.0 for v in run["delta_of_deltas"].values())
        assert run["hard_task_outcome"] == "tie"
    assert report["hard_task_record"] == {"wins": 0, "losses": 0, "ties": 2}


def test_compare_single_seed(tmp_path):
    a = write(tmp_path, "a.yaml")
    b = write(tmp_path, "b.yaml", step_size=0.4)
    assert cli.main(["compare", "--config", str(a), "--config", str(b), "--out", "cmp"]) == 0
    report = json.loads((tmp_path / "cmp" / "comparison.json").read_text())
    assert len(report["runs"]) == 1
    assert report["runs"][0]["hard_task_outcome"] in ("win", "loss", "tie")


def test_compare_rejects_mismatched_setups(tmp_path):
    a = write(tmp_path, "a.yaml")
    b = write(tmp_path, "b.yaml", steps=5)
    assert cli.main(["compare", "--config", str(a), "--config", str(b)]) == 2
    data = yaml.safe_load(a.read_text())
    data["environments"]["vid"]["resolution"] = 16
    c = tmp_path / "c.yaml"
    c.write_text(yaml.safe_dump(data))
    assert cli.main(["compare", "--config", str(a), "--config", str(c)]) == 2
    assert cli.main(["compare", "--config", str(a)]) == 2
