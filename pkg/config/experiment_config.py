"""
Experiment configuration for blocktune runs.

One YAML file describes the networks, the disturbance, the scenario draw, the
solver and the tuning hyperparameters. Environment variables (optionally from
a ``.env`` file) override the worker count and the output directory.
"""

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Mapping, Optional, Tuple, Union

import psutil
import yaml
from dotenv import load_dotenv

from errors import ConfigError, InvalidParameter
from odesolve import IntegratorOptions
from probetune import OptimizerOptions

CONFIG_VERSION = 1

load_dotenv()


def default_threads() -> int:
    """Physical core count, falling back to 1."""
    return psutil.cpu_count(logical=False) or 1


def _number(data: Mapping, key: str, where: str, default=None, kind=float, positive=False, minimum=None):
    value = data.get(key, default)
    name = f"{where}.{key}" if where else key
    if value is None:
        raise ConfigError(name, "is required")
    if isinstance(value, bool):
        raise ConfigError(name, f"must be a number, got {value!r}")
    try:
        value = kind(value)
    except (TypeError, ValueError):
        raise ConfigError(name, f"must be a {kind.__name__}, got {value!r}") from None
    if kind is float and not math.isfinite(value):
        raise ConfigError(name, f"must be finite, got {value}")
    if positive and not value > 0:
        raise ConfigError(name, f"must be positive, got {value}")
    if minimum is not None and value < minimum:
        raise ConfigError(name, f"must be at least {minimum}, got {value}")
    return value


def _table(data: Mapping, key: str) -> Mapping:
    value = data.get(key) or {}
    if not isinstance(value, Mapping):
        raise ConfigError(key, "must be a table")
    return value


def _unknown(data: Mapping, allowed, where: str):
    extra = sorted(set(data) - set(allowed))
    if extra:
        raise ConfigError(f"{where}.{extra[0]}" if where else extra[0], "is not a known setting")


@dataclass
class SolverSettings:
    method: str = "trapezoid"
    initial_step: float = 0.05
    max_step: float = math.inf
    rel_tol: float = 1e-6
    abs_tol: float = 1e-8
    newton_tol: float = 1e-10
    newton_max_iters: int = 25

    @classmethod
    def from_dict(cls, data: Mapping) -> "SolverSettings":
        where = "solver"
        _unknown(data, cls.__dataclass_fields__, where)
        settings = cls(
            method=str(data.get("method", cls.method)),
            initial_step=_number(data, "initial_step", where, cls.initial_step, positive=True),
            max_step=_number(data, "max_step", where, positive=True) if "max_step" in data else math.inf,
            rel_tol=_number(data, "rel_tol", where, cls.rel_tol, positive=True),
            abs_tol=_number(data, "abs_tol", where, cls.abs_tol, positive=True),
            newton_tol=_number(data, "newton_tol", where, cls.newton_tol, positive=True),
            newton_max_iters=_number(data, "newton_max_iters", where, cls.newton_max_iters, int, minimum=1),
        )
        settings.to_options()
        return settings

    def to_options(self) -> IntegratorOptions:
        try:
            return IntegratorOptions(
                method=self.method,
                rel_tol=self.rel_tol,
                abs_tol=self.abs_tol,
                max_step=self.max_step,
                initial_step=self.initial_step,
                newton_tol=self.newton_tol,
                newton_max_iters=self.newton_max_iters,
            )
        except InvalidParameter as exc:
            raise ConfigError("solver", str(exc)) from exc


@dataclass
class ScenarioSettings:
    seed: int = 0
    count: int = 10
    sigma: float = 0.1
    buses: Optional[List[int]] = None

    @classmethod
    def from_dict(cls, data: Mapping) -> "ScenarioSettings":
        where = "scenarios"
        _unknown(data, cls.__dataclass_fields__, where)
        buses = data.get("buses")
        if buses is not None:
            if not isinstance(buses, list) or not buses:
                raise ConfigError(f"{where}.buses", "must be a non-empty list of bus ids")
            buses = [_number({"bus": b}, "bus", f"{where}.buses[]", kind=int, minimum=1) for b in buses]
        return cls(
            seed=_number(data, "seed", where, cls.seed, int, minimum=0),
            count=_number(data, "count", where, cls.count, int, minimum=1),
            sigma=_number(data, "sigma", where, cls.sigma, positive=True),
            buses=buses,
        )


@dataclass
class DisturbanceSettings:
    buses: List[int] = field(default_factory=lambda: [1])
    delta_p: float = -0.1
    time: float = 1.0

    @classmethod
    def from_dict(cls, data: Mapping) -> "DisturbanceSettings":
        where = "disturbance"
        _unknown(data, ("bus", "buses", "delta_p", "time"), where)
        buses = data.get("buses", [data["bus"]] if "bus" in data else [1])
        if not isinstance(buses, list) or not buses:
            raise ConfigError(f"{where}.buses", "must be a non-empty list of bus ids")
        return cls(
            buses=[_number({"bus": b}, "bus", f"{where}.buses[]", kind=int, minimum=1) for b in buses],
            delta_p=_number(data, "delta_p", where, -0.1),
            time=_number(data, "time", where, 1.0, minimum=0.0),
        )


@dataclass
class TuningSettings:
    tunable: str = "D"
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iters: int = 2000
    window: int = 50
    rel_tol: float = 1e-6
    grad_tol: float = 1e-8
    inner_max_iters: int = 200
    system_range: Tuple[float, float] = (0.0, 1.0)
    spec_range: Tuple[float, float] = (0.0, 5.0)
    log_every: int = 10

    @classmethod
    def from_dict(cls, data: Mapping) -> "TuningSettings":
        where = "tuning"
        _unknown(data, cls.__dataclass_fields__, where)
        settings = cls(
            tunable=str(data.get("tunable", cls.tunable)),
            lr=_number(data, "lr", where, cls.lr, positive=True),
            beta1=_number(data, "beta1", where, cls.beta1, positive=True),
            beta2=_number(data, "beta2", where, cls.beta2, positive=True),
            eps=_number(data, "eps", where, cls.eps, positive=True),
            max_iters=_number(data, "max_iters", where, cls.max_iters, int, minimum=1),
            window=_number(data, "window", where, cls.window, int, minimum=1),
            rel_tol=_number(data, "rel_tol", where, cls.rel_tol, minimum=0.0),
            grad_tol=_number(data, "grad_tol", where, cls.grad_tol, minimum=0.0),
            inner_max_iters=_number(data, "inner_max_iters", where, cls.inner_max_iters, int, minimum=1),
            system_range=_range(data, "system_range", cls.system_range),
            spec_range=_range(data, "spec_range", cls.spec_range),
            log_every=_number(data, "log_every", where, cls.log_every, int, minimum=1),
        )
        for key in ("beta1", "beta2"):
            if not getattr(settings, key) < 1:
                raise ConfigError(f"{where}.{key}", "must be below 1")
        return settings

    def optimizer(self, inner: bool = False) -> OptimizerOptions:
        return OptimizerOptions(
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            max_iters=self.inner_max_iters if inner else self.max_iters,
            window=self.window,
            rel_tol=self.rel_tol,
            grad_tol=self.grad_tol,
            log_every=self.log_every,
        )


def _range(data: Mapping, key: str, default) -> Tuple[float, float]:
    value = data.get(key, list(default))
    name = f"tuning.{key}"
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(name, "must be a [low, high] pair")
    low = _number({"low": value[0]}, "low", name)
    high = _number({"high": value[1]}, "high", name)
    if not 0 <= low <= high:
        raise ConfigError(name, f"needs 0 <= low <= high, got [{low}, {high}]")
    return low, high


def _path(data: Mapping, key: str, base: Path, required: bool) -> Optional[Path]:
    value = data.get(key)
    if value is None:
        if required:
            raise ConfigError(key, "is required")
        return None
    path = Path(value)
    if not path.is_absolute():
        path = base / path
    if not path.exists():
        raise ConfigError(key, f"file {path} does not exist")
    return path


_TOP_LEVEL = (
    "config_version",
    "name",
    "network",
    "specification",
    "horizon",
    "samples",
    "solver",
    "scenarios",
    "disturbance",
    "tuning",
    "output_dir",
    "threads",
)


@dataclass
class ExperimentConfig:
    """A validated experiment: networks, scenarios, solver and tuning settings."""

    network: Path
    specification: Optional[Path] = None
    name: str = "experiment"
    horizon: float = 30.0
    samples: int = 100
    solver: SolverSettings = field(default_factory=SolverSettings)
    scenarios: ScenarioSettings = field(default_factory=ScenarioSettings)
    disturbance: DisturbanceSettings = field(default_factory=DisturbanceSettings)
    tuning: TuningSettings = field(default_factory=TuningSettings)
    output_dir: Path = Path("output")
    threads: int = field(default_factory=default_threads)
    source: Optional[Path] = None

    @classmethod
    def from_dict(cls, data: Any, base_dir: Union[str, Path] = ".") -> "ExperimentConfig":
        if not isinstance(data, Mapping):
            raise ConfigError("config", "must be a table")
        version = data.get("config_version")
        if version != CONFIG_VERSION:
            raise ConfigError("config_version", f"must be {CONFIG_VERSION}, got {version!r}")
        _unknown(data, _TOP_LEVEL, "")
        base = Path(base_dir)
        output_dir = Path(data.get("output_dir", "output"))
        return cls(
            network=_path(data, "network", base, required=True),
            specification=_path(data, "specification", base, required=False),
            name=str(data.get("name", "experiment")),
            horizon=_number(data, "horizon", "", 30.0, positive=True),
            samples=_number(data, "samples", "", 100, int, minimum=2),
            solver=SolverSettings.from_dict(_table(data, "solver")),
            scenarios=ScenarioSettings.from_dict(_table(data, "scenarios")),
            disturbance=DisturbanceSettings.from_dict(_table(data, "disturbance")),
            tuning=TuningSettings.from_dict(_table(data, "tuning")),
            output_dir=output_dir if output_dir.is_absolute() else base / output_dir,
            threads=_number(data, "threads", "", default_threads(), int, minimum=1),
        )

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError("config", f"invalid YAML in {path}: {exc}") from exc
        config = cls.from_dict(data, path.parent)
        config.source = path
        return config.with_environment()

    def with_environment(self) -> "ExperimentConfig":
        """Apply ``BLOCKTUNE_THREADS`` and ``BLOCKTUNE_OUTPUT_DIR`` overrides."""
        threads = os.getenv("BLOCKTUNE_THREADS")
        if threads:
            self.threads = _number({"BLOCKTUNE_THREADS": threads}, "BLOCKTUNE_THREADS", "", kind=int, minimum=1)
        output_dir = os.getenv("BLOCKTUNE_OUTPUT_DIR")
        if output_dir:
            self.output_dir = Path(output_dir)
        return self

    def require_specification(self) -> Path:
        if self.specification is None:
            raise ConfigError("specification", "is required for this command")
        return self.specification
