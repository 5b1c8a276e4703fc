import json
from pathlib import Path

import pytest
import yaml

import cli
from config.experiment_config import ExperimentConfig

ROOT = Path(__file__).resolve().parents[1]

SYSTEM = """\
nodes:
  - {id: 1, name: a, model: swing+pid, params: {M: 4.0, D: 0.4, P_m: 1.2, P_load: 1.0}}
  - {id: 2, name: b, model: swing+pid, params: {M: 3.0, D: 0.7, P_m: 0.8, P_load: 1.0}}
edges:
  - {src: 1, dst: 2, model: admittance-line, params: {B: -5.0}}
"""

SPECIFICATION = """\
nodes:
  - {id: 1, name: a, model: swing, params: {M: 4.5, D: 1.0, P_m: 1.2, P_load: 1.0}}
  - {id: 2, name: b, model: swing, params: {M: 3.5, D: 1.0, P_m: 0.8, P_load: 1.0}}
edges:
  - {src: 1, dst: 2, model: admittance-line, params: {B: -5.0}}
"""


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    monkeypatch.delenv("BLOCKTUNE_THREADS", raising=False)
    monkeypatch.delenv("BLOCKTUNE_OUTPUT_DIR", raising=False)


@pytest.fixture
def workspace(tmp_path):
    (tmp_path / "system.yaml").write_text(SYSTEM, encoding="utf-8")
    (tmp_path / "specification.yaml").write_text(SPECIFICATION, encoding="utf-8")
    return tmp_path


def experiment(directory: Path, name: str = "experiment.yaml", **overrides) -> Path:
    data = {
        "config_version": 1,
        "name": "two_bus",
        "network": "system.yaml",
        "specification": "specification.yaml",
        "horizon": 2.0,
        "samples": 5,
        "scenarios": {"seed": 7, "count": 2, "sigma": 0.1},
        "solver": {"method": "trapezoid", "initial_step": 0.1, "newton_tol": 1e-12},
        "tuning": {"max_iters": 3, "inner_max_iters": 3, "lr": 0.05},
        "output_dir": "out",
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key] = {**data[key], **value}
        else:
            data[key] = value
    path = directory / name
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


def test_simulate_without_disturbance_stays_at_rest(tmp_path, capsys):
    config = tmp_path / "two_machine.yaml"
    config.write_text(
        yaml.safe_dump(
            {
                "config_version": 1,
                "name": "rest",
                "network": str(ROOT / "config" / "networks" / "two_machine.yaml"),
                "horizon": 5.0,
                "samples": 11,
                "disturbance": {"buses": [1, 2], "delta_p": 0.0},
                "solver": {"method": "trapezoid", "initial_step": 0.05},
            }
        ),
        encoding="utf-8",
    )
    assert cli.main(["simulate", "--config", str(config), "--out", str(tmp_path / "sim")]) == cli.EXIT_OK
    lines = (tmp_path / "sim" / "frequencies.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "t,swing.ω,swing_pid.ω"
    assert len(lines) == 12
    for line in lines[1:]:
        _, *omega = (float(v) for v in line.split(","))
        assert omega == pytest.approx([0.0, 0.0], abs=1e-10)
    assert (tmp_path / "sim" / "trajectory.csv").exists()
    assert (tmp_path / "sim" / "frequencies.svg").read_text(encoding="utf-8").startswith("<svg")
    assert "final_frequency" in capsys.readouterr().out


def test_steady_state(workspace):
    result = cli.cmd_steady_state(ExperimentConfig.from_file(experiment(workspace)))
    assert result.summary["residual_norm"] < 1e-9
    lines = result.files["steady_state"].read_text(encoding="utf-8").splitlines()
    assert lines[0] == "state,value"
    assert lines[1].startswith("a.ω,")
    assert len(lines) == 11


def test_configuration_errors_exit_with_model_code(workspace, capsys):
    path = experiment(workspace, horizon=-1.0)
    assert cli.main(["distance", "--config", str(path)]) == cli.EXIT_MODEL
    assert "horizon" in capsys.readouterr().err
    path = experiment(workspace, scenarios={"count": 0})
    assert cli.main(["distance", "--config", str(path)]) == cli.EXIT_MODEL
    assert "scenarios.count" in capsys.readouterr().err


def test_command_line_overrides_are_validated(workspace, capsys):
    path = experiment(workspace)
    assert cli.main(["distance", "--config", str(path), "--threads", "0"]) == cli.EXIT_MODEL
    assert "threads" in capsys.readouterr().err
    assert cli.main(["distance", "--config", str(path), "--seed", "-3"]) == cli.EXIT_MODEL
    assert "seed" in capsys.readouterr().err


def test_scenario_bus_outside_network(workspace, capsys):
    path = experiment(workspace, scenarios={"buses": [3]})
    assert cli.main(["distance", "--config", str(path)]) == cli.EXIT_MODEL
    assert "scenarios.buses" in capsys.readouterr().err


def test_missing_specification(workspace, capsys):
    path = experiment(workspace, specification=None)
    assert cli.main(["distance", "--config", str(path)]) == cli.EXIT_MODEL
    assert "specification" in capsys.readouterr().err


def test_non_finite_gains_exit_with_solver_code(workspace, capsys):
    path = experiment(workspace)
    config = ExperimentConfig.from_file(path)
    problem = cli.build_problem(config)
    params = workspace / "bad.yaml"
    params.write_text(
        yaml.safe_dump(
            {
                "tunable": "D",
                "system": [float("nan")] * 2,
                "specification": [[float(v) for v in q] for q in problem.q0],
            }
        ),
        encoding="utf-8",
    )
    code = cli.main(["compare", "--config", str(path), "--params", str(params)])
    assert code == cli.EXIT_SOLVER
    assert "error" in capsys.readouterr().err


def test_compare_identical_networks(workspace):
    path = experiment(
        workspace,
        network="specification.yaml",
        tuning={"system_range": [0.5, 0.5], "spec_range": [0.5, 0.5]},
    )
    result = cli.cmd_compare(ExperimentConfig.from_file(path), scenario=1)
    assert result.summary["max_gap"] < 1e-10
    header = result.files["compare"].read_text(encoding="utf-8").splitlines()[0]
    assert header == "t,system.a.ω,system.b.ω,specification.a.ω,specification.b.ω"
    assert result.files["plot"].exists()


def test_compare_rejects_unknown_scenario(workspace, capsys):
    path = experiment(workspace)
    assert cli.main(["compare", "--config", str(path), "--scenario", "5"]) == cli.EXIT_MODEL
    assert "scenario 5" in capsys.readouterr().err


def test_distance_writes_fitted_gains(workspace):
    result = cli.cmd_distance(ExperimentConfig.from_file(experiment(workspace)))
    report = json.loads(result.files["distance"].read_text(encoding="utf-8"))
    assert report["distance"] == result.summary["distance"] >= 0.0
    assert report["seed"] == 7
    assert len(report["scenarios"]) == 2
    assert all(len(s["specification_gains"]) == 2 for s in report["scenarios"])
    assert all(v >= 0.0 for s in report["scenarios"] for v in s["specification_gains"])


def test_tune_is_reproducible(workspace):
    path = experiment(workspace)
    first, second = workspace / "first", workspace / "second"
    assert cli.main(["tune", "--config", str(path), "--out", str(first)]) == cli.EXIT_OK
    assert cli.main(["tune", "--config", str(path), "--out", str(second), "--threads", "2"]) == cli.EXIT_OK
    for name in ("tune_manifest.json", "tuned_parameters.yaml", "loss_history.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()
    manifest = json.loads((first / "tune_manifest.json").read_text(encoding="utf-8"))
    assert manifest["seed"] == 7
    assert manifest["iterations"] == 3
    assert manifest["final_loss"] <= manifest["initial_loss"]
    assert manifest["interrupted"] is False
    assert len(manifest["tuned_system_gains"]) == 2


def test_tune_interrupted_during_initial_distance_writes_starting_gains(workspace, monkeypatch):
    path = experiment(workspace)
    out = workspace / "interrupted"

    def interrupted(*args, **kwargs):
        raise KeyboardInterrupt

    monkeypatch.setattr(cli, "behavioral_distance", interrupted)
    assert cli.main(["tune", "--config", str(path), "--out", str(out)]) == cli.EXIT_INTERRUPTED
    manifest = json.loads((out / "tune_manifest.json").read_text(encoding="utf-8"))
    assert manifest["interrupted"] is True
    assert manifest["iterations"] == 0
    assert manifest["initial_distance"] is None
    params = yaml.safe_load((out / "tuned_parameters.yaml").read_text(encoding="utf-8"))
    assert params["system"] == manifest["initial_system_gains"]
    assert (out / "loss_history.csv").read_text(encoding="utf-8").splitlines() == ["iteration,loss"]


def test_tuned_parameters_feed_compare(workspace):
    path = experiment(workspace)
    out = workspace / "tuned"
    assert cli.main(["tune", "--config", str(path), "--out", str(out)]) == cli.EXIT_OK
    config = ExperimentConfig.from_file(path)
    config.output_dir = out
    result = cli.cmd_compare(config, params=out / "tuned_parameters.yaml", scenario=0)
    assert result.summary["max_gap"] >= result.summary["final_gap"] >= 0.0


def test_seed_changes_scenarios(workspace):
    path = experiment(workspace)
    args = cli.build_parser().parse_args(["distance", "--config", str(path), "--seed", "11"])
    config = cli.load_config(args)
    assert config.scenarios.seed == 11
    assert cli.build_problem(config).scenarios != cli.build_problem(ExperimentConfig.from_file(path)).scenarios
