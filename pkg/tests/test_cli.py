import json

import pytest

from driftcfl import cli
from driftcfl.config import dump_toml

from test_engine import small_cfg

FAST_THEORY = {"sgd_trials": 200, "trajectory_trials": 50, "events": 3, "grid_points": 200}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(dump_toml(small_cfg()))
    return path


def test_run_report_resume(config_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["run", str(config_file), "--out", str(out)]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["rounds"] == 12
    assert cli.main(["report", str(out)]) == 0
    assert capsys.readouterr().out.startswith("target_accuracy,tta_s")
    assert (out / "report_series.csv").exists()
    assert cli.main(["resume", str(out)]) == 0


def test_run_uses_output_root(config_file, tmp_output_root):
    assert cli.main(["run", str(config_file)]) == 0
    assert (tmp_output_root / "small" / "summary.json").exists()


def test_invalid_config_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[training]\neta = -1.0\nlocal_steps = 0\n")
    assert cli.main(["run", str(bad)]) == 1
    err = capsys.readouterr().err
    assert "training.eta" in err and "training.local_steps" in err


def test_missing_file_and_bad_usage_exit_1(tmp_path):
    assert cli.main(["run", str(tmp_path / "absent.toml")]) == 1
    assert cli.main(["report", str(tmp_path)]) == 1
    assert cli.main(["frobnicate"]) == 1
    assert cli.main(["ablate", "x.toml", "--axis", "nope"]) == 1


def test_help_exit_0(capsys):
    assert cli.main(["--help"]) == 0
    assert "verify-theory" in capsys.readouterr().out


def test_runtime_failure_exit_2(config_file, monkeypatch):
    def boom(*args, **kwargs):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(cli, "run_experiment", boom)
    assert cli.main(["run", str(config_file)]) == 2


def test_ablate(config_file, tmp_path, capsys):
    out = tmp_path / "abl"
    assert cli.main(["ablate", str(config_file), "--axis", "tau_grid", "--values", "0.5,0.25", "--out",
                     str(out)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2 and all(": ok" in line for line in lines)
    assert (out / "ablation_tau_grid.csv").exists()
    assert cli.main(["ablate", str(config_file), "--axis", "policy_modes", "--values", "hybrid,bogus", "--out",
                     str(out)]) == 2


def test_verify_theory_pass(tmp_path, capsys):
    params = tmp_path / "theory.json"
    params.write_text(json.dumps(FAST_THEORY))
    report = tmp_path / "report.json"
    assert cli.main(["verify-theory", "--params", str(params), "--out", str(report)]) == 0
    data = json.loads(report.read_text())
    assert data["all_passed"] and len(data["checks"]) == 5
    assert "theorem_trajectory: pass" in capsys.readouterr().out


def test_verify_theory_failure_exit_3(tmp_path):
    params = tmp_path / "theory.toml"
    # a negative slack demands the empirical side beat the bound by 90%
    params.write_text("\n".join(f"{k} = {v}" for k, v in FAST_THEORY.items()) + "\ntolerance = -0.9\n")
    assert cli.main(["verify-theory", "--params", str(params)]) == 3


def test_verify_theory_unknown_param_exit_1(tmp_path):
    params = tmp_path / "theory.json"
    params.write_text(json.dumps({"warp_factor": 9}))
    assert cli.main(["verify-theory", "--params", str(params)]) == 1
