#!/usr/bin/env python3
"""
Acceptance run for the five-bus tuning experiment.

Tunes the five-bus system against its specification twice, once on one worker
thread and once on four, then checks:

- the behavioral distance drops by at least a factor of 100
- both runs wrote byte-identical manifests, parameters and loss histories
- after tuning, system and specification settle on the same frequencies for
  the configured load step and for every tuning scenario

Usage:
    python scripts/run_acceptance.py [--config config/experiments/five_bus.yaml] [--out output/acceptance]
"""

import argparse
import dataclasses
import sys
import time
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT))

import numpy as np  # noqa: E402

from cli import build_problem, cmd_compare, cmd_tune, load_parameters  # noqa: E402
from config.experiment_config import ExperimentConfig  # noqa: E402
from errors import BlockTuneError  # noqa: E402
from logger_config import log_performance, logger  # noqa: E402
from probetune import Scenario  # noqa: E402

MIN_REDUCTION = 100.0
MAX_FINAL_GAP = 1e-3
COMPARED_FILES = ("tune_manifest.json", "tuned_parameters.yaml", "loss_history.csv")


def run_tune(config: ExperimentConfig, out: Path, threads: int):
    config = dataclasses.replace(config, output_dir=out, threads=threads)
    started = time.perf_counter()
    result = cmd_tune(config)
    duration = time.perf_counter() - started
    log_performance("tune", duration * 1000, threads=threads)
    print(f"  threads={threads}: {result.summary} ({duration:.1f}s)")
    return result


def check_reduction(summary) -> bool:
    reduction = summary["reduction_factor"]
    if summary["final_distance"] == 0.0:
        print("✓ Behavioral distance reduced to zero")
        return True
    if reduction is None or reduction < MIN_REDUCTION:
        print(f"✗ Reduction factor {reduction} below {MIN_REDUCTION:g}")
        return False
    print(f"✓ Reduction factor {reduction:.1f} (initial {summary['initial_distance']:.4e})")
    return True


def check_identical(first: Path, second: Path) -> bool:
    ok = True
    for name in COMPARED_FILES:
        if (first / name).read_bytes() == (second / name).read_bytes():
            print(f"✓ {name} identical across thread counts")
        else:
            print(f"✗ {name} differs between {first} and {second}")
            ok = False
    return ok


def check_fixed_points(config: ExperimentConfig, out: Path) -> bool:
    config = dataclasses.replace(config, output_dir=out / "compare")
    problem = build_problem(config)
    p, qs = load_parameters(out / "tuned_parameters.yaml", problem)
    ok = True

    worst = 0.0
    for j in range(len(problem.scenarios)):
        worst = max(worst, cmd_compare(config, out / "tuned_parameters.yaml", j).summary["final_gap"])
    if worst < MAX_FINAL_GAP:
        print(f"✓ Final frequency gap over all scenarios {worst:.2e}")
    else:
        print(f"✗ Final frequency gap {worst:.2e} over scenarios exceeds {MAX_FINAL_GAP:g}")
        ok = False

    disturbance = config.disturbance
    step = Scenario(disturbance.buses[0], disturbance.delta_p)
    single = dataclasses.replace(problem, scenarios=[step])
    w_sys, w_spec = single.frequencies(0, p, qs[0])
    gap = float(np.max(np.abs(w_sys[-1] - w_spec[-1])))
    label = f"step {disturbance.delta_p:+g} on bus {disturbance.buses[0]}"
    if gap < MAX_FINAL_GAP:
        print(f"✓ Same fixed point after {label} (gap {gap:.2e})")
    else:
        print(f"✗ Fixed points differ after {label} (gap {gap:.2e})")
        ok = False
    return ok


def main() -> int:
    parser = argparse.ArgumentParser(description="Five-bus tuning acceptance run")
    parser.add_argument("--config", type=Path, default=ROOT / "config" / "experiments" / "five_bus.yaml")
    parser.add_argument("--out", type=Path, default=ROOT / "output" / "acceptance")
    args = parser.parse_args()

    print("=" * 60)
    print("blocktune acceptance: five-bus tuning")
    print("=" * 60)

    try:
        config = ExperimentConfig.from_file(args.config)
        first = run_tune(config, args.out / "threads1", 1)
        run_tune(config, args.out / "threads4", 4)
        checks = [
            check_reduction(first.summary),
            check_identical(args.out / "threads1", args.out / "threads4"),
            check_fixed_points(config, args.out / "threads1"),
        ]
    except BlockTuneError as exc:
        logger.error(f"Acceptance run failed: {exc}")
        print(f"✗ {exc}")
        return 1

    print()
    if all(checks):
        print("🎉 Acceptance checks passed")
        return 0
    print(f"💥 {checks.count(False)} acceptance checks failed")
    return 1


if __name__ == "__main__":
    sys.exit(main())
