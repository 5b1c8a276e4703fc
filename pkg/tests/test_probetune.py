import math
from pathlib import Path

import numpy as np
import pytest

import powerlib as pl
from errors import DimensionMismatch, IntegrationFailure, InvalidParameter, NonFiniteLoss
from netdyn import NetworkTopology, assemble
from odesolve import IntegratorOptions
from probetune import (
    AdamState,
    OptimizerOptions,
    Scenario,
    TuneProblem,
    adam_step,
    behavioral_distance,
    gradient,
    initial_gains,
    minimize,
    output_metric,
    parallel_map,
    sample_scenarios,
    tune,
    value_and_gradient,
)

NETWORKS = Path(__file__).resolve().parents[1] / "config" / "networks"
SOLVER = IntegratorOptions(method="trapezoid", initial_step=0.1, newton_tol=1e-12)
SCENARIOS = [Scenario(1, -0.1), Scenario(2, 0.05)]


def two_bus_system():
    nodes = [pl.swing_pid_bus(4.0, 0.4, load=1.0, power=1.2), pl.swing_pid_bus(3.0, 0.7, load=1.0, power=0.8)]
    return assemble(NetworkTopology(2, ((1, 2),)), nodes, [pl.admittance_line(0.0, -5.0)])


def two_bus_specification():
    nodes = [pl.proportional_bus(4.5, 1.0, load=1.0, power=1.2), pl.proportional_bus(3.5, 1.0, load=1.0, power=0.8)]
    return assemble(NetworkTopology(2, ((1, 2),)), nodes, [pl.admittance_line(0.0, -5.0)])


@pytest.fixture(scope="module")
def problem():
    return TuneProblem.build(
        two_bus_system(),
        two_bus_specification(),
        SCENARIOS,
        horizon=5.0,
        samples=11,
        options=SOLVER,
        p0=[0.3, 0.6],
        q0=[1.2, 2.0],
    )


def quadratic(theta):
    return np.sum((theta - 3.0) ** 2)


# scenarios


def test_scenarios_are_reproducible():
    first = sample_scenarios(42, 10, [1, 2, 3, 4, 5], 0.1)
    assert first == sample_scenarios(42, 10, [1, 2, 3, 4, 5], 0.1)
    assert first != sample_scenarios(43, 10, [1, 2, 3, 4, 5], 0.1)
    # each scenario has its own stream, so a longer draw extends a shorter one
    assert sample_scenarios(42, 4, [1, 2, 3, 4, 5], 0.1) == first[:4]
    assert {s.bus for s in first} <= {1, 2, 3, 4, 5}


def test_scenario_statistics():
    scenarios = sample_scenarios(7, 20000, [1, 2, 3, 4, 5], 0.1)
    steps = np.array([s.delta_p for s in scenarios])
    assert abs(steps.mean()) < 0.003
    assert abs(steps.std() - 0.1) < 0.002
    counts = np.bincount([s.bus for s in scenarios], minlength=6)[1:]
    assert np.all(np.abs(counts - 4000) < 300)


@pytest.mark.parametrize("n, buses, sigma", [(0, [1], 0.1), (3, [1], 0.0), (3, [], 0.1)])
def test_scenario_arguments(n, buses, sigma):
    with pytest.raises(InvalidParameter):
        sample_scenarios(0, n, buses, sigma)


def test_scenario_rejects_non_finite_step():
    with pytest.raises(InvalidParameter):
        Scenario(1, math.nan)


def test_initial_gains():
    p, qs = initial_gains(5, 4, (0.0, 1.0), (0.0, 5.0), n=3)
    assert p.shape == (4,)
    assert np.all((0.0 <= p) & (p <= 1.0))
    assert len(qs) == 3
    assert all(np.array_equal(q, qs[0]) for q in qs)
    assert qs[0] is not qs[1]
    assert np.all((0.0 <= qs[0]) & (qs[0] <= 5.0))
    again, _ = initial_gains(5, 4, (0.0, 1.0), (0.0, 5.0), n=3)
    assert np.array_equal(p, again)


# output metric


def test_output_metric_values():
    times = [0.0, 1.0, 2.0]
    zeros = np.zeros((3, 2))
    assert output_metric([zeros], [zeros], times) == 0.0
    assert output_metric([np.ones((3, 2))], [zeros], times) == 6.0
    one = np.zeros((1, 1))
    assert output_metric([one + 1.0], [one], [0.0]) == 1.0


def test_output_metric_against_loops(rng):
    count, samples, buses = 4, 7, 3
    a = rng.normal(size=(count, samples, buses))
    b = rng.normal(size=(count, samples, buses))
    expected = 0.0
    for j in range(count):
        for t in range(samples):
            for i in range(buses):
                expected += (a[j, t, i] - b[j, t, i]) ** 2
    expected /= count
    times = np.linspace(0.0, 1.0, samples)
    assert output_metric(list(a), list(b), times) == pytest.approx(expected, rel=1e-12)
    # invariant under reordering scenarios and buses
    order, columns = rng.permutation(count), rng.permutation(buses)
    shuffled = output_metric([a[j][:, columns] for j in order], [b[j][:, columns] for j in order], times)
    assert shuffled == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize(
    "system, spec, times",
    [
        ([np.zeros((2, 2))], [np.zeros((2, 2))] * 2, [0, 1]),
        ([], [], [0, 1]),
        ([np.zeros((2, 2))], [np.zeros((2, 3))], [0, 1]),
        ([np.zeros((2, 2))], [np.zeros((2, 2))], [0, 1, 2]),
    ],
)
def test_output_metric_dimension_errors(system, spec, times):
    with pytest.raises(DimensionMismatch):
        output_metric(system, spec, times)


# gradients and ADAM


def test_gradient_of_quadratic():
    assert gradient(quadratic, [5.0]).tolist() == [4.0]
    value, grad = value_and_gradient(quadratic, [5.0, 1.0])
    assert value == 8.0
    assert grad.tolist() == [4.0, -4.0]


def test_gradient_of_constant_is_zero():
    assert gradient(lambda theta: 2.0, [1.0, 2.0]).tolist() == [0.0, 0.0]


def test_adam_first_step():
    g = np.array([0.5, -2.0, 1e-3])
    delta, state = adam_step(AdamState.zeros(3, lr=0.1), g)
    assert delta == pytest.approx(-0.1 * g / (np.abs(g) + 1e-8), rel=1e-12)
    assert state.step == 1


def test_adam_zero_gradient_decays_moments():
    delta, _ = adam_step(AdamState.zeros(1), [0.0])
    assert delta.tolist() == [0.0]
    state = AdamState(1, np.array([1.0]), np.array([1.0]))
    _, state = adam_step(state, [0.0])
    assert state.m.tolist() == pytest.approx([0.9])
    assert state.v.tolist() == pytest.approx([0.999])


def test_adam_solves_quadratic():
    p = np.array([0.0])
    state = AdamState.zeros(1, lr=0.1)
    for _ in range(500):
        delta, state = adam_step(state, 2 * (p - 3.0))
        p = p + delta
    assert abs(p[0] - 3.0) < 0.01


def test_adam_validation():
    with pytest.raises(DimensionMismatch):
        adam_step(AdamState.zeros(2), [1.0])
    with pytest.raises(InvalidParameter):
        AdamState.zeros(2, beta1=1.0)
    with pytest.raises(InvalidParameter):
        OptimizerOptions(lr=0.0)


def test_minimize_quadratic():
    opts = OptimizerOptions(lr=0.1, max_iters=3000, lower_bound=None, rel_tol=0.0)
    result = minimize(lambda x: value_and_gradient(quadratic, x), [0.0, 10.0], opts)
    assert result.params == pytest.approx([3.0, 3.0], abs=1e-3)
    assert result.loss == min(result.history)
    assert result.reason in {"loss", "gradient", "converged", "max_iters"}


def test_minimize_projects_onto_lower_bound():
    opts = OptimizerOptions(lr=0.1, max_iters=100)
    result = minimize(lambda x: value_and_gradient(lambda t: np.sum((t + 1.0) ** 2), x), [0.5], opts)
    assert result.params.tolist() == [0.0]
    assert result.loss == 1.0


def test_minimize_rejects_non_finite_loss():
    with pytest.raises(NonFiniteLoss) as info:
        minimize(lambda x: (math.nan, np.zeros(1)), [1.0], OptimizerOptions())
    assert info.value.iteration == 0


def test_minimize_keeps_best_iterate_on_interrupt():
    calls = []

    def value_and_grad(x):
        calls.append(x.copy())
        if len(calls) == 3:
            raise KeyboardInterrupt
        return float(np.sum((x - 3.0) ** 2)), 2 * (x - 3.0)

    result = minimize(value_and_grad, [0.0], OptimizerOptions(lr=0.5))
    assert result.interrupted
    assert result.reason == "interrupted"
    assert result.iterations == 2
    assert result.params.tolist() == calls[1].tolist()


def test_minimize_interrupted_before_first_loss_reports_start():
    def value_and_grad(x):
        raise KeyboardInterrupt

    result = minimize(value_and_grad, [2.0], OptimizerOptions(), start_loss=1.0)
    assert result.interrupted
    assert result.iterations == 0
    assert result.loss == 1.0
    assert result.params.tolist() == [2.0]


def test_tune_interrupted_at_once_keeps_starting_loss(problem, monkeypatch):
    def interrupted(*args, **kwargs):
        raise KeyboardInterrupt

    monkeypatch.setattr(problem, "loss_and_gradient", interrupted)
    result = tune(problem, OptimizerOptions(max_iters=5), start_loss=0.25)
    assert result.interrupted
    assert result.history == []
    assert result.initial_loss == result.final_loss == 0.25
    assert result.p.tolist() == problem.p0.tolist()
    assert [q.tolist() for q in result.q] == [q.tolist() for q in problem.q0]


def test_parallel_map_keeps_order():
    assert parallel_map(lambda k: k * k, range(10), threads=4) == [k * k for k in range(10)]


# tuning problem


def test_build_validates_inputs():
    system, spec = two_bus_system(), two_bus_specification()
    single = assemble(NetworkTopology(1), [pl.proportional_bus(1.0, 1.0)], [])
    with pytest.raises(DimensionMismatch):
        TuneProblem.build(system, single, SCENARIOS)
    with pytest.raises(InvalidParameter):
        TuneProblem.build(system, spec, [])
    with pytest.raises(InvalidParameter):
        TuneProblem.build(system, spec, [Scenario(3, 0.1)])
    with pytest.raises(InvalidParameter):
        TuneProblem.build(system, spec, SCENARIOS, horizon=0.0)
    with pytest.raises(InvalidParameter):
        TuneProblem.build(system, spec, SCENARIOS, samples=1)
    with pytest.raises(DimensionMismatch):
        TuneProblem.build(system, spec, SCENARIOS, p0=[1.0, 2.0, 3.0])


def test_problem_layout(problem):
    assert problem.buses == 2
    assert len(problem.sample_times) == 11
    assert problem.sample_times[-1] == 5.0
    assert problem.p0.tolist() == [0.3, 0.6]
    assert [q.tolist() for q in problem.q0] == [[1.2, 2.0], [1.2, 2.0]]
    # pre-fault operating point: no frequency deviation anywhere
    for net, x0 in ((problem.system, problem.system_x0), (problem.specification, problem.spec_x0)):
        assert np.abs(x0[net.indices_of("ω")]).max() < 1e-9


def test_scenario_response_starts_flat(problem):
    system, spec = problem.frequencies(0, problem.p0, problem.q0[0])
    assert system.shape == spec.shape == (11, 2)
    assert np.abs(system[0]).max() < 1e-9
    # a load drop on bus 1 speeds the machines up
    assert system[1:].max() > 1e-3


def test_identical_networks_have_zero_distance():
    spec = two_bus_specification()
    same = TuneProblem.build(spec, spec, SCENARIOS, horizon=5.0, samples=11, options=SOLVER)
    assert same.loss(same.p0, same.q0) == 0.0
    distance, fitted = behavioral_distance(same, OptimizerOptions(max_iters=20))
    assert distance < 1e-10
    assert all(np.array_equal(q, same.p0) for q in fitted)
    result = tune(same, OptimizerOptions(max_iters=20, lr=0.05))
    assert result.iterations == 1
    assert np.linalg.norm(result.p - same.p0) < 10 * 0.05


def test_gradient_matches_finite_differences(problem):
    p, q = np.array([0.3, 0.6]), np.array([1.2, 2.0])
    value, grad = problem.scenario_loss_and_gradient(0, p, q)
    assert value == pytest.approx(problem.scenario_loss(0, p, q), rel=1e-12)
    theta = np.concatenate([p, q])
    h = 1e-4
    for k in range(4):
        up, down = theta.copy(), theta.copy()
        up[k] += h
        down[k] -= h
        numeric = (problem.scenario_loss(0, up[:2], up[2:]) - problem.scenario_loss(0, down[:2], down[2:])) / (2 * h)
        assert grad[k] == pytest.approx(numeric, rel=1e-4, abs=1e-8)


def test_loss_and_gradient_reduce_scenarios(problem):
    loss, grad_p, grad_q = problem.loss_and_gradient(problem.p0, problem.q0)
    assert loss == pytest.approx(problem.loss(problem.p0, problem.q0), rel=1e-12)
    parts = [problem.scenario_loss_and_gradient(j, problem.p0, problem.q0[j]) for j in range(2)]
    assert grad_p == pytest.approx((parts[0][1][:2] + parts[1][1][:2]) / 2, rel=1e-12)
    assert grad_q[1] == pytest.approx(parts[1][1][2:] / 2, rel=1e-12)


def test_threads_do_not_change_results(problem):
    serial = problem.loss_and_gradient(problem.p0, problem.q0, threads=1)
    threaded = problem.loss_and_gradient(problem.p0, problem.q0, threads=2)
    assert serial[0] == threaded[0]
    assert serial[1].tolist() == threaded[1].tolist()
    assert [g.tolist() for g in serial[2]] == [g.tolist() for g in threaded[2]]


def test_distance_is_below_starting_fit(problem):
    distance, fitted = behavioral_distance(problem, OptimizerOptions(max_iters=15, lr=0.1))
    assert distance <= problem.loss(problem.p0, problem.q0)
    assert distance == pytest.approx(problem.loss(problem.p0, fitted), rel=1e-9)


def test_distance_is_below_loss_at_random_specification_gains(problem, rng):
    distance, _ = behavioral_distance(problem, OptimizerOptions(max_iters=300, lr=0.03))
    count = len(problem.scenarios)
    for q in rng.uniform(0.0, 5.0, size=(20, problem.buses)):
        assert distance <= problem.loss(problem.p0, [q] * count) + 1e-12


def test_shipped_five_bus_system_is_not_a_specification_member(rng):
    system = pl.load_network(NETWORKS / "five_bus_system.yaml")
    specification = pl.load_network(NETWORKS / "five_bus_specification.yaml")
    shipped = TuneProblem.build(system, specification, [Scenario(4, -0.1)], horizon=10.0, samples=21, options=SOLVER)
    k_p = system.default_parameters()[system.parameter_indices_of("k_p")]
    for p in rng.uniform(0.0, 1.0, size=(3, 5)):
        # matching damping and steady state still leaves the virtual inertia k_d unmatched
        assert shipped.scenario_loss(0, p, p + k_p) > 1e-9
    distance, _ = behavioral_distance(shipped, OptimizerOptions(max_iters=20, lr=0.05), p=shipped.p0)
    assert distance > 1e-12


def test_tune_never_increases_loss(problem):
    opts = OptimizerOptions(max_iters=6, lr=0.1)
    first = tune(problem, opts)
    assert first.final_loss <= first.initial_loss
    assert first.iterations == 6
    assert len(first.q) == 2
    assert np.all(first.p >= 0.0)
    again = tune(problem, opts)
    assert again.history == first.history
    assert again.p.tolist() == first.p.tolist()


def test_integration_failure_names_scenario(problem):
    with pytest.raises(IntegrationFailure) as info:
        problem.scenario_loss(1, np.array([math.nan, 0.5]), problem.q0[1])
    assert info.value.scenario == 1
