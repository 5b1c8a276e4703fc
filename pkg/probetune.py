"""
Probabilistic behavioral tuning.

A complex *system* network is tuned so that its frequency response to random
load steps matches a simpler *specification* network. The objective is the
output metric

    Δo = 1/N · Σ_j Σ_i Σ_t (ω_sys,i^j(t) - ω_spec,i^j(t))²

over N scenarios j, all buses i and uniformly spaced sample times t. System
gains ``p`` are shared by all scenarios; the specification gets one copy
``q_j`` per scenario. Gradients are forward-mode: parameters are seeded as
dual numbers and the tangents are carried through the integrator.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

import dual
from errors import (
    DimensionMismatch,
    IntegrationFailure,
    InvalidParameter,
    NonFiniteLoss,
    SolverError,
)
from logger_config import log_tuning_progress, logger
from netdyn import NetworkSystem
from odesolve import Event, IntegratorOptions, find_steady_state, integrate


@dataclass(frozen=True)
class Scenario:
    bus: int
    delta_p: float
    seed: int = 0

    def __post_init__(self):
        if not math.isfinite(self.delta_p):
            raise InvalidParameter(f"scenario power step must be finite, got {self.delta_p}")


def sample_scenarios(seed: int, n: int, bus_ids: Sequence[int], sigma: float) -> List[Scenario]:
    """``n`` scenarios with a uniformly chosen bus and a Normal(0, sigma²) load step.

    Every scenario draws from its own child stream of ``SeedSequence(seed)``.
    """
    if n < 1:
        raise InvalidParameter(f"at least one scenario is required, got {n}")
    if not sigma > 0:
        raise InvalidParameter(f"sigma must be positive, got {sigma}")
    buses = [int(b) for b in bus_ids]
    if not buses:
        raise InvalidParameter("no buses to perturb")
    scenarios = []
    for child in np.random.SeedSequence(seed).spawn(n):
        rng = np.random.default_rng(child)
        bus = buses[int(rng.integers(len(buses)))]
        scenarios.append(Scenario(bus, float(rng.normal(0.0, sigma)), int(child.generate_state(1)[0])))
    return scenarios


def initial_gains(
    seed: int,
    buses: int,
    system_range: Tuple[float, float] = (0.0, 1.0),
    spec_range: Tuple[float, float] = (0.0, 5.0),
    n: int = 1,
) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Uniform initial gains: one system vector and ``n`` identical specification copies."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    p = rng.uniform(system_range[0], system_range[1], buses)
    q = rng.uniform(spec_range[0], spec_range[1], buses)
    return p, [q.copy() for _ in range(n)]


def output_metric(system_outputs, spec_outputs, sample_times) -> float:
    """Δo for per-scenario (time × bus) frequency matrices."""
    if len(system_outputs) != len(spec_outputs):
        raise DimensionMismatch(
            f"{len(system_outputs)} system scenarios vs {len(spec_outputs)} specification scenarios"
        )
    if not len(system_outputs):
        raise DimensionMismatch("no scenarios")
    count = len(np.atleast_1d(sample_times))
    total = 0.0
    for a, b in zip(system_outputs, spec_outputs):
        a, b = np.asarray(a), np.asarray(b)
        if a.shape != b.shape or a.ndim != 2 or a.shape[0] != count:
            raise DimensionMismatch(
                f"frequency matrices must be (times={count}) × buses, got {a.shape} and {b.shape}"
            )
        total = total + np.sum((a - b) ** 2)
    return total / len(system_outputs)


# forward-mode gradients


def value_and_gradient(loss_fn: Callable, params) -> Tuple[float, np.ndarray]:
    params = np.asarray(params, dtype=float)
    out = loss_fn(dual.seed(params))
    if isinstance(out, dual.Dual):
        return out.value, np.array(out.tangent, dtype=float)
    return float(out), np.zeros(len(params))


def gradient(loss_fn: Callable, params) -> np.ndarray:
    """Gradient of ``loss_fn`` at ``params`` from one batched dual evaluation."""
    return value_and_gradient(loss_fn, params)[1]


# ADAM


@dataclass(frozen=True)
class AdamState:
    step: int
    m: np.ndarray
    v: np.ndarray
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InvalidParameter(f"ADAM betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if len(self.m) != len(self.v):
            raise DimensionMismatch("ADAM moment vectors differ in length")

    @classmethod
    def zeros(cls, size: int, lr: float = 0.05, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        return cls(0, np.zeros(size), np.zeros(size), lr, beta1, beta2, eps)


def adam_step(state: AdamState, grad) -> Tuple[np.ndarray, AdamState]:
    """Bias-corrected ADAM update; returns the parameter delta and the new state."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.m.shape:
        raise DimensionMismatch(f"gradient has shape {grad.shape}, moments {state.m.shape}")
    step = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad**2
    m_hat = m / (1 - state.beta1**step)
    v_hat = v / (1 - state.beta2**step)
    delta = -state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return delta, replace(state, step=step, m=m, v=v)


@dataclass
class OptimizerOptions:
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iters: int = 2000
    window: int = 50
    rel_tol: float = 1e-6
    grad_tol: float = 1e-8
    loss_tol: float = 1e-14
    lower_bound: Optional[float] = 0.0
    log_every: int = 10

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidParameter("max_iters must be at least 1")
        if self.window < 1:
            raise InvalidParameter("window must be at least 1")
        if not self.lr > 0:
            raise InvalidParameter(f"learning rate must be positive, got {self.lr}")


@dataclass
class OptimizationResult:
    params: np.ndarray
    loss: float
    history: List[float]
    reason: str
    interrupted: bool
    iterations: int
    grad_norm: float


def minimize(
    value_and_grad: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    start,
    options: OptimizerOptions,
    label: str = "adam",
    on_iteration: Optional[Callable[[int, float, float], None]] = None,
    start_loss: Optional[float] = None,
) -> OptimizationResult:
    """ADAM descent with projection to ``lower_bound``; returns the best iterate seen.

    ``start_loss`` is the known loss at ``start``. It is the reported loss if
    the run is interrupted before the first evaluation finishes.
    """
    x = np.array(start, dtype=float)
    state = AdamState.zeros(len(x), options.lr, options.beta1, options.beta2, options.eps)
    history: List[float] = []
    best_x, best_loss = x.copy(), math.inf if start_loss is None else float(start_loss)
    reason, interrupted, grad_norm = "max_iters", False, math.inf
    iteration = 0
    try:
        for iteration in range(options.max_iters):
            loss, grad = value_and_grad(x)
            grad_norm = float(np.linalg.norm(grad))
            if not (math.isfinite(loss) and math.isfinite(grad_norm)):
                raise NonFiniteLoss(f"{label}: loss {loss} at iteration {iteration}", iteration=iteration)
            history.append(loss)
            if loss < best_loss:
                best_x, best_loss = x.copy(), loss
            if on_iteration is not None:
                on_iteration(iteration, loss, grad_norm)
            if loss <= options.loss_tol:
                reason = "loss"
                break
            if grad_norm < options.grad_tol:
                reason = "gradient"
                break
            if len(history) > options.window:
                previous = history[-1 - options.window]
                if abs(previous - loss) <= options.rel_tol * max(abs(previous), 1e-300):
                    reason = "converged"
                    break
            if iteration + 1 >= options.max_iters:
                break
            delta, state = adam_step(state, grad)
            x = x + delta
            if options.lower_bound is not None:
                x = np.maximum(x, options.lower_bound)
    except KeyboardInterrupt:
        interrupted, reason = True, "interrupted"
        logger.warning(f"{label}: interrupted after {len(history)} iterations, keeping best iterate")
    return OptimizationResult(best_x, best_loss, history, reason, interrupted, len(history), grad_norm)


# problem definition


def initial_guess(net: NetworkSystem) -> np.ndarray:
    """Zero angles and frequencies with unit real voltages."""
    guess = np.zeros(net.dimension)
    for index in net.indices_of("V_re"):
        guess[index] = 1.0
    return guess


@dataclass
class TuneProblem:
    system: NetworkSystem
    specification: NetworkSystem
    scenarios: List[Scenario]
    sample_times: np.ndarray
    horizon: float
    options: IntegratorOptions
    tunable: str = "D"
    p0: Optional[np.ndarray] = None
    q0: Optional[List[np.ndarray]] = None
    system_base: np.ndarray = field(default=None, repr=False)
    spec_base: np.ndarray = field(default=None, repr=False)
    system_x0: np.ndarray = field(default=None, repr=False)
    spec_x0: np.ndarray = field(default=None, repr=False)

    @classmethod
    def build(
        cls,
        system: NetworkSystem,
        specification: NetworkSystem,
        scenarios: Sequence[Scenario],
        horizon: float = 30.0,
        samples: int = 100,
        tunable: str = "D",
        options: Optional[IntegratorOptions] = None,
        p0=None,
        q0=None,
    ) -> "TuneProblem":
        if system.topology.node_count != specification.topology.node_count:
            raise DimensionMismatch(
                f"system has {system.topology.node_count} buses, "
                f"specification has {specification.topology.node_count}"
            )
        if not scenarios:
            raise InvalidParameter("at least one scenario is required")
        if not horizon > 0:
            raise InvalidParameter(f"horizon must be positive, got {horizon}")
        if samples < 2:
            raise InvalidParameter(f"at least two sample points are required, got {samples}")
        buses = system.topology.node_count
        for scenario in scenarios:
            if not 1 <= scenario.bus <= buses:
                raise InvalidParameter(f"scenario bus {scenario.bus} outside [1, {buses}]")
        options = options or IntegratorOptions(method="trapezoid", initial_step=0.1)
        system_base = system.default_parameters()
        spec_base = specification.default_parameters()
        problem = cls(
            system=system,
            specification=specification,
            scenarios=list(scenarios),
            sample_times=np.linspace(0.0, horizon, samples),
            horizon=float(horizon),
            options=options,
            tunable=tunable,
            system_base=system_base,
            spec_base=spec_base,
            system_x0=find_steady_state(system, initial_guess(system), system_base, options=options),
            spec_x0=find_steady_state(specification, initial_guess(specification), spec_base, options=options),
        )
        problem.p0 = np.array(
            p0 if p0 is not None else system_base[problem.system_tunable], dtype=float
        )
        if q0 is None:
            q0 = [spec_base[problem.spec_tunable] for _ in scenarios]
        elif np.ndim(q0) == 1:
            q0 = [q0 for _ in scenarios]
        problem.q0 = [np.array(q, dtype=float) for q in q0]
        problem._check_vectors(problem.p0, problem.q0)
        logger.info(
            f"Tuning problem: {buses} buses, {len(scenarios)} scenarios, horizon {horizon}s, "
            f"{samples} samples, tunable {tunable}"
        )
        return problem

    @property
    def buses(self) -> int:
        return self.system.topology.node_count

    @property
    def system_tunable(self) -> List[int]:
        return self.system.parameter_indices_of(self.tunable)

    @property
    def spec_tunable(self) -> List[int]:
        return self.specification.parameter_indices_of(self.tunable)

    def _check_vectors(self, p, qs):
        if len(p) != self.buses:
            raise DimensionMismatch(f"{len(p)} system gains for {self.buses} buses")
        if len(qs) != len(self.scenarios):
            raise DimensionMismatch(f"{len(qs)} specification copies for {len(self.scenarios)} scenarios")
        for q in qs:
            if len(q) != self.buses:
                raise DimensionMismatch(f"{len(q)} specification gains for {self.buses} buses")

    # simulation

    def _frequencies(self, net: NetworkSystem, base, x0, tunable, gains, j: int):
        params = np.array(list(base), dtype=object)
        for index, value in zip(tunable, gains):
            params[index] = value
        scenario = self.scenarios[j]
        step = Event(0.0, {net.parameter_indices_of("dP")[scenario.bus - 1]: scenario.delta_p})
        try:
            trajectory = integrate(
                net, x0, dual.as_state_array(params), (0.0, self.horizon), self.options, events=[step]
            )
        except SolverError as exc:
            raise IntegrationFailure(f"scenario {j}: {exc}", scenario=j) from exc
        return trajectory.sample(self.sample_times)[:, net.indices_of("ω")]

    def system_frequencies(self, j: int, p) -> np.ndarray:
        return self._frequencies(self.system, self.system_base, self.system_x0, self.system_tunable, p, j)

    def spec_frequencies(self, j: int, q) -> np.ndarray:
        return self._frequencies(
            self.specification, self.spec_base, self.spec_x0, self.spec_tunable, q, j
        )

    def scenario_loss(self, j: int, p, q):
        """Summand of Δo for scenario ``j`` (works with dual gains)."""
        residual = self.system_frequencies(j, p) - self.spec_frequencies(j, q)
        return np.sum(residual**2)

    def scenario_loss_and_gradient(self, j: int, p, q) -> Tuple[float, np.ndarray]:
        n = self.buses
        return value_and_gradient(
            lambda theta: self.scenario_loss(j, theta[:n], theta[n:]), np.concatenate([p, q])
        )

    def loss(self, p, qs, threads: int = 1) -> float:
        self._check_vectors(p, qs)
        values = parallel_map(lambda j: self.scenario_loss(j, p, qs[j]), range(len(self.scenarios)), threads)
        return float(sum(values)) / len(self.scenarios)

    def loss_and_gradient(self, p, qs, threads: int = 1) -> Tuple[float, np.ndarray, List[np.ndarray]]:
        """Δo and its gradient with respect to ``p`` and each ``q_j``."""
        self._check_vectors(p, qs)
        n, count = self.buses, len(self.scenarios)
        parts = parallel_map(
            lambda j: self.scenario_loss_and_gradient(j, p, qs[j]), range(count), threads
        )
        loss = 0.0
        grad_p = np.zeros(n)
        grad_q = []
        for value, grad in parts:
            loss += value
            grad_p = grad_p + grad[:n]
            grad_q.append(grad[n:] / count)
        return loss / count, grad_p / count, grad_q

    def frequencies(self, j: int, p, q) -> Tuple[np.ndarray, np.ndarray]:
        return self.system_frequencies(j, p), self.spec_frequencies(j, q)


def parallel_map(fn: Callable, items, threads: int = 1) -> list:
    """Ordered map, on a thread pool when ``threads > 1``."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


# workflows


def behavioral_distance(
    problem: TuneProblem,
    options: Optional[OptimizerOptions] = None,
    p=None,
    q_start=None,
    threads: int = 1,
) -> Tuple[float, List[np.ndarray]]:
    """Mean over scenarios of the specification fit minimized per scenario.

    The system gains stay fixed; each ``q_j`` is fitted by ADAM starting from
    ``q_start[j]`` (the problem's current copies by default).
    """
    options = options or OptimizerOptions(max_iters=200)
    p = problem.p0 if p is None else np.asarray(p, dtype=float)
    q_start = problem.q0 if q_start is None else q_start
    problem._check_vectors(p, q_start)
    started = time.perf_counter()

    def fit(j: int):
        target = problem.system_frequencies(j, p)

        def value_and_grad(q):
            return value_and_gradient(
                lambda qd: np.sum((target - problem.spec_frequencies(j, qd)) ** 2), q
            )

        result = minimize(value_and_grad, q_start[j], options, label=f"distance[{j}]")
        if result.interrupted:
            raise KeyboardInterrupt
        logger.debug(
            f"Scenario {j}: fitted specification in {result.iterations} iterations "
            f"({result.reason}), loss {result.loss:.6e}"
        )
        return result

    results = parallel_map(fit, range(len(problem.scenarios)), threads)
    distance = sum(r.loss for r in results) / len(results)
    logger.info(
        f"Behavioral distance {distance:.6e} over {len(results)} scenarios "
        f"in {(time.perf_counter() - started):.1f}s"
    )
    return distance, [r.params for r in results]


@dataclass
class TuneResult:
    p: np.ndarray
    q: List[np.ndarray]
    history: List[float]
    reason: str
    interrupted: bool
    iterations: int
    initial_loss: float
    final_loss: float
    grad_norm: float


def tune(
    problem: TuneProblem,
    options: Optional[OptimizerOptions] = None,
    threads: int = 1,
    p=None,
    q=None,
    start_loss: Optional[float] = None,
) -> TuneResult:
    """Joint ADAM descent on ``(p, q_1..q_N)`` minimizing Δo.

    Pass ``start_loss`` when Δo at the starting gains is already known (the
    behavioral distance is Δo at its fitted copies); an interrupt during the
    first evaluation then still reports it.
    """
    options = options or OptimizerOptions()
    p = problem.p0 if p is None else np.asarray(p, dtype=float)
    q = problem.q0 if q is None else q
    problem._check_vectors(p, q)
    n, count = problem.buses, len(problem.scenarios)

    def unpack(theta):
        return theta[:n], [theta[n + j * n : n + (j + 1) * n] for j in range(count)]

    def value_and_grad(theta):
        p_now, q_now = unpack(theta)
        loss, grad_p, grad_q = problem.loss_and_gradient(p_now, q_now, threads)
        return loss, np.concatenate([grad_p] + grad_q)

    def progress(iteration, loss, grad_norm):
        if iteration % options.log_every == 0:
            log_tuning_progress(iteration, loss, grad_norm, scenarios=count)

    start = np.concatenate([p] + list(q))
    result = minimize(
        value_and_grad, start, options, label="tune", on_iteration=progress, start_loss=start_loss
    )
    best_p, best_q = unpack(result.params)
    if start_loss is not None:
        initial = float(start_loss)
    else:
        initial = result.history[0] if result.history else math.nan
    logger.info(
        f"Tuning finished after {result.iterations} iterations ({result.reason}): "
        f"loss {initial:.6e} -> {result.loss:.6e}"
    )
    return TuneResult(
        p=best_p,
        q=best_q,
        history=result.history,
        reason=result.reason,
        interrupted=result.interrupted,
        iterations=result.iterations,
        initial_loss=initial,
        final_loss=result.loss,
        grad_norm=result.grad_norm,
    )


__all__ = [
    "Scenario",
    "TuneProblem",
    "AdamState",
    "OptimizerOptions",
    "OptimizationResult",
    "TuneResult",
    "sample_scenarios",
    "initial_gains",
    "output_metric",
    "value_and_gradient",
    "gradient",
    "adam_step",
    "minimize",
    "behavioral_distance",
    "tune",
    "parallel_map",
    "initial_guess",
]
