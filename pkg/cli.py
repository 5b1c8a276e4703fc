#!/usr/bin/env python3
"""
blocktune command line.

    python cli.py simulate     --config config/experiments/two_machine.yaml
    python cli.py steady-state --config config/experiments/five_bus.yaml
    python cli.py distance     --config config/experiments/five_bus.yaml
    python cli.py tune         --config config/experiments/five_bus.yaml --threads 4
    python cli.py compare      --config config/experiments/five_bus.yaml --scenario 0 --params out/tuned_parameters.yaml

Exit codes: 0 success, 1 configuration or model error, 2 numerical failure,
130 interrupted.
"""

import argparse
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import yaml

from config.experiment_config import DisturbanceSettings, ExperimentConfig
from errors import ConfigError, InvalidParameter, ModelError, SolverError
from export import write_csv, write_json, write_yaml
from logger_config import log_error, log_performance, log_run_stage, logger
from odesolve import find_steady_state, integrate
from plotting import PALETTE, Series, write_plot
from powerlib import LoadDisturbance, load_network
from probetune import (
    TuneProblem,
    TuneResult,
    behavioral_distance,
    initial_gains,
    initial_guess,
    sample_scenarios,
    tune,
)

EXIT_OK = 0
EXIT_MODEL = 1
EXIT_SOLVER = 2
EXIT_INTERRUPTED = 130


@dataclass
class CommandResult:
    files: Dict[str, Path] = field(default_factory=dict)
    summary: Dict[str, Any] = field(default_factory=dict)
    interrupted: bool = False


def _frequency_names(net) -> List[str]:
    return [f"{name}.ω" for name in net.node_names]


def cmd_simulate(
    config: ExperimentConfig,
    disturbance: Optional[DisturbanceSettings] = None,
    network: Optional[Path] = None,
) -> CommandResult:
    """Integrate one network through a load step from its steady state."""
    net = load_network(network or config.network)
    options = config.solver.to_options()
    disturbance = disturbance or config.disturbance
    p = net.default_parameters()
    x0 = find_steady_state(net, initial_guess(net), p, options=options)
    events = [LoadDisturbance(bus, disturbance.delta_p, disturbance.time).event(net) for bus in disturbance.buses]
    trajectory = integrate(net, x0, p, (0.0, config.horizon), options, events=events)

    times = np.linspace(0.0, config.horizon, config.samples)
    states = trajectory.sample(times)
    omega = net.indices_of("ω")
    out = config.output_dir
    files = {
        "trajectory": trajectory.to_csv(out / "trajectory.csv", times),
        "frequencies": write_csv(
            out / "frequencies.csv",
            ["t"] + _frequency_names(net),
            ([t] + [states[k, i] for i in omega] for k, t in enumerate(times)),
        ),
    }
    series = [
        Series(name, times, [float(states[k, i]) for k in range(len(times))])
        for name, i in zip(net.node_names, omega)
    ]
    files["plot"] = write_plot(
        out / "frequencies.svg",
        series,
        title=f"{config.name}: frequency after load step {disturbance.delta_p:+g} at t={disturbance.time:g}s",
    )
    final = {name: float(states[-1, i]) for name, i in zip(net.node_names, omega)}
    return CommandResult(files, {"final_frequency": final})


def cmd_steady_state(config: ExperimentConfig) -> CommandResult:
    net = load_network(config.network)
    options = config.solver.to_options()
    p = net.default_parameters()
    x = find_steady_state(net, initial_guess(net), p, options=options)
    residual = float(np.linalg.norm(net.rhs(x, p, 0.0)))
    path = write_csv(config.output_dir / "steady_state.csv", ["state", "value"], zip(net.state_names, x))
    return CommandResult({"steady_state": path}, {"residual_norm": residual})


def build_problem(config: ExperimentConfig) -> TuneProblem:
    system = load_network(config.network)
    specification = load_network(config.require_specification())
    buses = system.topology.node_count
    settings = config.scenarios
    bus_ids = settings.buses or list(range(1, buses + 1))
    for bus in bus_ids:
        if bus > buses:
            raise ConfigError("scenarios.buses", f"bus {bus} outside [1, {buses}]")
    scenarios = sample_scenarios(settings.seed, settings.count, bus_ids, settings.sigma)
    tuning = config.tuning
    p0, q0 = initial_gains(settings.seed, buses, tuning.system_range, tuning.spec_range, settings.count)
    return TuneProblem.build(
        system,
        specification,
        scenarios,
        horizon=config.horizon,
        samples=config.samples,
        tunable=tuning.tunable,
        options=config.solver.to_options(),
        p0=p0,
        q0=q0,
    )


def _scenario_records(problem: TuneProblem, qs=None) -> List[Dict[str, Any]]:
    records = []
    for j, scenario in enumerate(problem.scenarios):
        record = {"index": j, "bus": scenario.bus, "delta_p": scenario.delta_p}
        if qs is not None:
            record["specification_gains"] = [float(v) for v in qs[j]]
        records.append(record)
    return records


def cmd_distance(config: ExperimentConfig) -> CommandResult:
    problem = build_problem(config)
    distance, qs = behavioral_distance(problem, config.tuning.optimizer(inner=True), threads=config.threads)
    path = write_json(
        config.output_dir / "distance.json",
        {
            "name": config.name,
            "seed": config.scenarios.seed,
            "tunable": config.tuning.tunable,
            "distance": distance,
            "system_gains": [float(v) for v in problem.p0],
            "scenarios": _scenario_records(problem, qs),
        },
    )
    return CommandResult({"distance": path}, {"distance": distance})


def cmd_tune(config: ExperimentConfig) -> CommandResult:
    """Distance, joint tuning, distance again; writes manifest, gains and loss history.

    An interrupt at any stage still writes the three files, holding the best
    gains known at that point.
    """
    problem = build_problem(config)
    inner = config.tuning.optimizer(inner=True)
    threads = config.threads
    out = config.output_dir

    log_run_stage("initial-distance", config.name)
    try:
        initial_distance, q_fit = behavioral_distance(problem, inner, threads=threads)
    except KeyboardInterrupt:
        logger.warning("Interrupted during the initial distance, writing the starting gains")
        initial_distance = None
        result = TuneResult(
            p=problem.p0,
            q=list(problem.q0),
            history=[],
            reason="interrupted",
            interrupted=True,
            iterations=0,
            initial_loss=None,
            final_loss=None,
            grad_norm=None,
        )
    else:
        log_run_stage("tune", config.name, initial_distance=initial_distance)
        result = tune(
            problem, config.tuning.optimizer(), threads=threads, q=q_fit, start_loss=initial_distance
        )

    final_distance = None
    q_final = result.q
    if not result.interrupted:
        log_run_stage("final-distance", config.name)
        try:
            final_distance, q_final = behavioral_distance(
                problem, inner, p=result.p, q_start=result.q, threads=threads
            )
        except KeyboardInterrupt:
            logger.warning("Interrupted during the final distance, writing the tuned gains")
            result.interrupted = True
    reduction = initial_distance / final_distance if initial_distance is not None and final_distance else None

    files = {
        "loss_history": write_csv(
            out / "loss_history.csv", ["iteration", "loss"], ([str(k), v] for k, v in enumerate(result.history))
        ),
        "parameters": write_yaml(
            out / "tuned_parameters.yaml",
            {
                "tunable": config.tuning.tunable,
                "seed": config.scenarios.seed,
                "system": [float(v) for v in result.p],
                "specification": [[float(v) for v in q] for q in q_final],
            },
        ),
    }
    manifest = {
        "name": config.name,
        "seed": config.scenarios.seed,
        "tunable": config.tuning.tunable,
        "horizon": config.horizon,
        "samples": config.samples,
        "scenarios": _scenario_records(problem),
        "initial_distance": initial_distance,
        "final_distance": final_distance,
        "reduction_factor": reduction,
        "initial_loss": result.initial_loss,
        "final_loss": result.final_loss,
        "iterations": result.iterations,
        "termination": result.reason,
        "interrupted": result.interrupted,
        "initial_system_gains": [float(v) for v in problem.p0],
        "tuned_system_gains": [float(v) for v in result.p],
    }
    files["manifest"] = write_json(out / "tune_manifest.json", manifest)
    summary = {
        "initial_distance": initial_distance,
        "final_distance": final_distance,
        "reduction_factor": reduction,
        "iterations": result.iterations,
    }
    return CommandResult(files, summary, interrupted=result.interrupted)


def load_parameters(path: Path, problem: TuneProblem):
    """System gains and per-scenario specification gains from ``tuned_parameters.yaml``."""
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError("params", f"cannot read {path}: {exc}") from exc
    if not isinstance(data, dict) or "system" not in data or "specification" not in data:
        raise ConfigError("params", f"{path} needs 'system' and 'specification' entries")
    if data.get("tunable", problem.tunable) != problem.tunable:
        raise ConfigError("params", f"{path} tunes {data['tunable']!r}, config tunes {problem.tunable!r}")
    p = np.array(data["system"], dtype=float)
    qs = [np.array(q, dtype=float) for q in data["specification"]]
    problem._check_vectors(p, qs)
    return p, qs


def cmd_compare(config: ExperimentConfig, params: Optional[Path] = None, scenario: int = 0) -> CommandResult:
    """System and specification frequency transients for one scenario."""
    problem = build_problem(config)
    if not 0 <= scenario < len(problem.scenarios):
        raise InvalidParameter(f"scenario {scenario} outside [0, {len(problem.scenarios) - 1}]")
    if params is not None:
        p, qs = load_parameters(params, problem)
    else:
        p, qs = problem.p0, problem.q0
    w_sys, w_spec = problem.frequencies(scenario, p, qs[scenario])
    times = problem.sample_times
    names = problem.system.node_names
    out = config.output_dir
    header = ["t"] + [f"system.{n}.ω" for n in names] + [f"specification.{n}.ω" for n in names]
    files = {
        "compare": write_csv(
            out / "compare.csv", header, ([t] + list(w_sys[k]) + list(w_spec[k]) for k, t in enumerate(times))
        )
    }
    series = []
    for i, name in enumerate(names):
        color = PALETTE[i % len(PALETTE)]
        series.append(Series(f"system {name}", times, w_sys[:, i], color))
        series.append(Series(f"specification {name}", times, w_spec[:, i], color, dashed=True))
    s = problem.scenarios[scenario]
    files["plot"] = write_plot(
        out / "compare.svg",
        series,
        title=f"{config.name}: scenario {scenario}, step {s.delta_p:+.4f} on bus {s.bus}",
    )
    gap = float(np.max(np.abs(w_sys - w_spec)))
    return CommandResult(files, {"max_gap": gap, "final_gap": float(np.max(np.abs(w_sys[-1] - w_spec[-1])))})


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, required=True, help="Experiment YAML file")
    common.add_argument("--seed", type=int, help="Override scenarios.seed")
    common.add_argument("--out", type=Path, help="Override the output directory")
    common.add_argument("--threads", type=int, help="Maximum worker threads")

    parser = argparse.ArgumentParser(prog="blocktune", description="Block-diagram power network tuning")
    sub = parser.add_subparsers(dest="command", required=True)
    simulate = sub.add_parser("simulate", parents=[common], help="Load step response of one network")
    simulate.add_argument(
        "--network", choices=("system", "specification"), default="system", help="Which network to simulate"
    )
    sub.add_parser("steady-state", parents=[common], help="Pre-fault steady state")
    sub.add_parser("distance", parents=[common], help="Behavioral distance at the initial gains")
    sub.add_parser("tune", parents=[common], help="Tune system and specification gains")
    compare = sub.add_parser("compare", parents=[common], help="System vs specification transients")
    compare.add_argument("--scenario", type=int, default=0, help="Scenario index")
    compare.add_argument("--params", type=Path, help="tuned_parameters.yaml from a tune run")
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed", f"must be non-negative, got {args.seed}")
        config.scenarios.seed = args.seed
    if args.out is not None:
        config.output_dir = args.out
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("threads", f"must be at least 1, got {args.threads}")
        config.threads = args.threads
    return config


def run(args: argparse.Namespace) -> CommandResult:
    config = load_config(args)
    if args.command == "simulate":
        network = config.require_specification() if args.network == "specification" else None
        return cmd_simulate(config, network=network)
    if args.command == "steady-state":
        return cmd_steady_state(config)
    if args.command == "distance":
        return cmd_distance(config)
    if args.command == "tune":
        return cmd_tune(config)
    return cmd_compare(config, args.params, args.scenario)


def _print_summary(result: CommandResult):
    for key, value in result.summary.items():
        print(f"{key}: {value}")
    for key, path in result.files.items():
        print(f"{key}: {path}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    run_id = f"{args.command}-{args.config.stem}"
    started = time.perf_counter()
    log_run_stage("start", run_id, command=args.command, config=str(args.config))
    try:
        result = run(args)
    except KeyboardInterrupt:
        logger.warning(f"{args.command} interrupted")
        return EXIT_INTERRUPTED
    except ModelError as exc:
        log_error(exc, command=args.command, run_id=run_id)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except SolverError as exc:
        log_error(exc, command=args.command, run_id=run_id)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    _print_summary(result)
    log_performance(args.command, (time.perf_counter() - started) * 1000, run_id=run_id)
    if result.interrupted:
        logger.warning(f"{args.command} interrupted, partial results written")
        return EXIT_INTERRUPTED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
