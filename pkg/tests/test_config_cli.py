import json

import pytest
import yaml

from kinflock import runner
from kinflock.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, EXIT_VIOLATION, main
from kinflock.config import ExperimentConfig, load_config, parse_override
from kinflock.errors import ConfigError

TINY = ["--override", "nx=16", "--override", "nxi=16", "--override", "t_end=0.02"]


def test_defaults_per_experiment():
    assert load_config("single_run").sigma == 1.0
    dec = load_config("decay_study")
    assert dec.sigma == 0.0 and dec.t_end == 20.0 and dec.align_consensus_to_grid
    assert load_config("epsilon_sweep").mode == "scaled"


def test_precedence_file_then_override(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"nx": 32, "mu": 0.2, "experiment": "ignored"}))
    cfg = load_config("single_run", p, ["mu=0.3"], out=tmp_path / "o")
    assert cfg.nx == 32 and cfg.mu == 0.3
    assert cfg.experiment == "single_run"
    assert cfg.out == str(tmp_path / "o")


def test_override_parsing():
    assert parse_override("epsilons=[0.2, 0.1]") == ("epsilons", [0.2, 0.1])
    assert parse_override("scheme=muscl") == ("scheme", "muscl")
    with pytest.raises(ConfigError):
        parse_override("nx")


@pytest.mark.parametrize("override", ["bogus=1", "nx=abc", "nx=2.5", "mu=true", "align_consensus_to_grid=1",
                                      "epsilons=0.1", "experiment_kind=x", "rho_amp=1.0", "t_end=-1",
                                      "epsilons=[0.1, 0.2]", "scheme=implicit", "limiter=superbee",
                                      "nxi=7", "alpha=-1", "steps=-2"])
def test_bad_values_raise(override):
    with pytest.raises(ConfigError):
        load_config("single_run", overrides=[override])


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config("single_run", tmp_path / "missing.yaml")
    p = tmp_path / "list.yaml"
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config("single_run", p)
    p.write_text("grid:\n  nx: 8\n")
    with pytest.raises(ConfigError):
        load_config("single_run", p)


def test_integral_float_is_accepted():
    assert load_config("single_run", overrides=["nx=32.0"]).nx == 32


def test_yaml_roundtrip():
    cfg = ExperimentConfig(nx=32, u_stream=[[1, 1, 0.02, 0.0]])
    assert ExperimentConfig(**yaml.safe_load(cfg.to_yaml())) == cfg


def test_cli_pass_writes_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["single", "--out", str(out), *TINY]) == EXIT_OK
    assert "single_run: pass" in capsys.readouterr().out
    resolved = yaml.safe_load((out / "resolved_config.yaml").read_text())
    assert resolved["nx"] == 16 and resolved["t_end"] == 0.02
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "pass"
    assert (out / "diagnostics.csv").exists() and (out / "snap_000000.flns").exists()
    steps = [json.loads(line) for line in (out / "steps.jsonl").read_text().splitlines()]
    assert len(steps) == summary["steps"] and steps[-1]["cfl_transport"] <= 0.5


def test_cli_config_error(tmp_path, capsys):
    assert main(["single", "--out", str(tmp_path), "--override", "bogus=1"]) == EXIT_CONFIG
    assert "unknown config key" in capsys.readouterr().err


def test_cli_solver_error(tmp_path):
    out = tmp_path / "run"
    code = main(["single", "--out", str(out), *TINY, "--override", "dt=1.0", "--override", "steps=1"])
    assert code == EXIT_SOLVER
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "solver_error" and "CflViolation" in summary["error"]
    # the last good state is kept on disk
    assert (out / "snap_000000.flns").exists()


def test_cli_violation(tmp_path, monkeypatch):
    monkeypatch.setattr(runner, "MASS_TOL", -1.0)
    assert main(["single", "--out", str(tmp_path / "run"), *TINY]) == EXIT_VIOLATION


def test_cli_decay_rejects_wrong_coefficients(tmp_path):
    assert main(["decay", "--out", str(tmp_path), "--override", "sigma=1.0"]) == EXIT_CONFIG
