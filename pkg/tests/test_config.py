import math
from pathlib import Path

import pytest
import yaml

from config import experiment_config
from config.experiment_config import ExperimentConfig, SolverSettings, TuningSettings
from errors import ConfigError

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    monkeypatch.delenv("BLOCKTUNE_THREADS", raising=False)
    monkeypatch.delenv("BLOCKTUNE_OUTPUT_DIR", raising=False)


@pytest.fixture
def network(tmp_path):
    path = tmp_path / "net.yaml"
    path.write_text(
        "nodes:\n  - {id: 1, model: swing, params: {M: 1.0, D: 1.0, P_m: 1.0, P_load: 1.0}}\n",
        encoding="utf-8",
    )
    return path


def minimal(**extra):
    data = {"config_version": 1, "network": "net.yaml"}
    data.update(extra)
    return data


def test_shipped_experiments_load():
    five_bus = ExperimentConfig.from_file(ROOT / "config" / "experiments" / "five_bus.yaml")
    assert five_bus.name == "five_bus"
    assert five_bus.scenarios.seed == 42
    assert five_bus.scenarios.count == 10
    assert five_bus.tuning.tunable == "D"
    assert five_bus.solver.to_options().method == "trapezoid"
    assert five_bus.specification.name == "five_bus_specification.yaml"
    two_machine = ExperimentConfig.from_file(ROOT / "config" / "experiments" / "two_machine.yaml")
    assert two_machine.disturbance.buses == [1, 2]
    assert two_machine.specification is None


def test_defaults_and_relative_paths(tmp_path, network, monkeypatch):
    monkeypatch.setattr(experiment_config.psutil, "cpu_count", lambda logical=True: 6)
    config = ExperimentConfig.from_dict(minimal(), tmp_path)
    assert config.network == network
    assert config.output_dir == tmp_path / "output"
    assert config.horizon == 30.0
    assert config.samples == 100
    assert config.threads == 6
    assert config.solver.max_step == math.inf
    assert config.tuning.system_range == (0.0, 1.0)


def test_default_threads_follow_physical_cores(tmp_path, network, monkeypatch):
    seen = []

    def cpu_count(logical=True):
        seen.append(logical)
        return None

    monkeypatch.setattr(experiment_config.psutil, "cpu_count", cpu_count)
    assert experiment_config.default_threads() == 1
    assert seen == [False]
    assert ExperimentConfig.from_dict(minimal(), tmp_path).threads == 1
    assert ExperimentConfig.from_dict(minimal(threads=3), tmp_path).threads == 3


def test_disturbance_accepts_single_bus(tmp_path, network):
    config = ExperimentConfig.from_dict(minimal(disturbance={"bus": 3, "delta_p": 0.2}), tmp_path)
    assert config.disturbance.buses == [3]
    assert config.disturbance.delta_p == 0.2
    assert config.disturbance.time == 1.0


@pytest.mark.parametrize(
    "extra, field",
    [
        ({"config_version": 2}, "config_version"),
        ({"horizon": -1.0}, "horizon"),
        ({"horizon": float("nan")}, "horizon"),
        ({"samples": 1}, "samples"),
        ({"threads": 0}, "threads"),
        ({"colour": "red"}, "colour"),
        ({"scenarios": {"count": 0}}, "scenarios.count"),
        ({"scenarios": {"sigma": 0.0}}, "scenarios.sigma"),
        ({"scenarios": {"buses": []}}, "scenarios.buses"),
        ({"scenarios": {"seed": True}}, "scenarios.seed"),
        ({"solver": {"initial_step": 0.0}}, "solver.initial_step"),
        ({"solver": {"method": "euler"}}, "solver"),
        ({"solver": {"order": 4}}, "solver.order"),
        ({"tuning": {"beta1": 1.0}}, "tuning.beta1"),
        ({"tuning": {"lr": "fast"}}, "tuning.lr"),
        ({"tuning": {"spec_range": [2.0, 1.0]}}, "tuning.spec_range"),
        ({"tuning": {"system_range": [0.0]}}, "tuning.system_range"),
        ({"disturbance": {"time": -1.0}}, "disturbance.time"),
        ({"network": "missing.yaml"}, "network"),
        ({"solver": [1, 2]}, "solver"),
    ],
)
def test_validation_names_the_field(tmp_path, network, extra, field):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict(minimal(**extra), tmp_path)
    assert info.value.field == field


def test_network_is_required(tmp_path):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict({"config_version": 1}, tmp_path)
    assert info.value.field == "network"


def test_require_specification(tmp_path, network):
    config = ExperimentConfig.from_dict(minimal(), tmp_path)
    with pytest.raises(ConfigError) as info:
        config.require_specification()
    assert info.value.field == "specification"
    config = ExperimentConfig.from_dict(minimal(specification="net.yaml"), tmp_path)
    assert config.require_specification() == network


def test_from_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(tmp_path / "absent.yaml")
    broken = tmp_path / "broken.yaml"
    broken.write_text("network: [unclosed\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(broken)
    scalar = tmp_path / "scalar.yaml"
    scalar.write_text("42\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(scalar)


def test_environment_overrides(tmp_path, network, monkeypatch):
    path = tmp_path / "experiment.yaml"
    path.write_text(yaml.safe_dump(minimal(threads=2)), encoding="utf-8")
    monkeypatch.setenv("BLOCKTUNE_THREADS", "6")
    monkeypatch.setenv("BLOCKTUNE_OUTPUT_DIR", str(tmp_path / "elsewhere"))
    config = ExperimentConfig.from_file(path)
    assert config.threads == 6
    assert config.output_dir == tmp_path / "elsewhere"
    assert config.source == path
    monkeypatch.setenv("BLOCKTUNE_THREADS", "0")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(path)


def test_optimizer_options_follow_tuning_settings():
    tuning = TuningSettings.from_dict({"lr": 0.01, "max_iters": 30, "inner_max_iters": 7})
    assert tuning.optimizer().max_iters == 30
    assert tuning.optimizer(inner=True).max_iters == 7
    assert tuning.optimizer().lr == 0.01


def test_solver_settings_build_options():
    options = SolverSettings.from_dict({"method": "rk4", "initial_step": 0.02, "max_step": 0.5}).to_options()
    assert options.method == "rk4"
    assert options.initial_step == 0.02
    assert options.max_step == 0.5
