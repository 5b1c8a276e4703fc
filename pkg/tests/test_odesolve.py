import math
from pathlib import Path

import numpy as np
import pytest

import blocksys as bs
import dual
import powerlib as pl
import symcore as sc
from errors import DimensionMismatch, InvalidParameter, OutOfRange
from odesolve import BlockRunner, Event, IntegratorOptions, find_steady_state, integrate
from probetune import initial_guess

S = sc.Symbol.state

NETWORKS = Path(__file__).resolve().parents[1] / "config" / "networks"


def decay_error(compiled, h):
    traj = integrate(compiled, [1.0], None, (0.0, 1.0), IntegratorOptions(method="rk4", initial_step=h))
    return abs(traj.final_state[0] - math.exp(-1.0))


@pytest.fixture
def decay(decay_block):
    return bs.compile(decay_block)


@pytest.fixture
def squared():
    """``dx/dt = -x`` with the algebraic output ``y = x²``."""
    x, y = S("x"), S("y")
    block = bs.make_block("sq", [bs.differential(x, -x), bs.explicit(y, x * x)], outputs=[x, y])
    return bs.compile(block, state_order=["x", "y"])


def test_rk4_decay(decay):
    assert decay_error(decay, 0.01) < 1e-8


def test_rk4_convergence_order(decay):
    order = math.log2(decay_error(decay, 0.1) / decay_error(decay, 0.05))
    assert 3.8 <= order <= 4.2


def test_dopri45_decay(decay):
    opts = IntegratorOptions(method="dopri45", rel_tol=1e-9, abs_tol=1e-12, initial_step=0.1)
    traj = integrate(decay, [1.0], None, (0.0, 2.0), opts)
    assert traj.final_state[0] == pytest.approx(math.exp(-2.0), rel=1e-7)
    assert len(traj.times) < 200


def test_trapezoid_handles_algebraic_rows(squared):
    h = 0.01
    traj = integrate(squared, [1.0, 0.5], [], (0.0, 1.0), IntegratorOptions(method="trapezoid", initial_step=h))
    # the inconsistent start is projected onto y = x²
    assert traj.states[0].tolist() == pytest.approx([1.0, 1.0])
    residual = np.abs(traj.states[:, 1] - traj.states[:, 0] ** 2)
    assert residual.max() < 1e-9
    exact_scheme = ((1 - h / 2) / (1 + h / 2)) ** 100
    assert traj.final_state[0] == pytest.approx(exact_scheme, rel=1e-10)
    assert traj.final_state[0] == pytest.approx(math.exp(-1.0), abs=1e-4)


def test_explicit_methods_reject_algebraic_rows(squared):
    with pytest.raises(InvalidParameter):
        integrate(squared, [1.0, 1.0], [], (0.0, 1.0), IntegratorOptions(method="rk4"))


def test_options_validation():
    with pytest.raises(InvalidParameter):
        IntegratorOptions(method="euler")
    with pytest.raises(InvalidParameter):
        IntegratorOptions(initial_step=0.0)
    assert IntegratorOptions(method="implicit-trapezoid").method == "trapezoid"


def test_integrate_argument_checks(decay):
    with pytest.raises(InvalidParameter):
        integrate(decay, [1.0], None, (1.0, 0.0))
    with pytest.raises(DimensionMismatch):
        integrate(decay, [1.0, 2.0], None, (0.0, 1.0))


def test_steady_state_swing(swing):
    runner = BlockRunner(bs.compile(swing), {"P_m": 1.0, "P_e": 1.0})
    x = find_steady_state(runner, [0.3])
    assert x[0] == pytest.approx(0.0, abs=1e-10)


def test_steady_state_swing_pid(swing_pid):
    compiled = bs.compile(swing_pid)
    x = find_steady_state(BlockRunner(compiled, {"P_e": 0.9}), [0.0, 0.0])
    assert x[compiled.state_index("ω")] == pytest.approx(0.0, abs=1e-10)
    assert x[compiled.state_index("int")] == pytest.approx(0.1, abs=1e-10)


def test_sample_at_knots_and_between(decay):
    traj = integrate(decay, [1.0], None, (0.0, 1.0), IntegratorOptions(method="rk4", initial_step=0.01))
    at_knots = traj.sample(traj.times[:5])
    assert at_knots[:, 0].tolist() == traj.states[:5, 0].tolist()
    assert traj.sample([0.505])[0, 0] == pytest.approx(math.exp(-0.505), abs=1e-8)
    with pytest.raises(OutOfRange):
        traj.sample([1.5])


def test_parameter_event(decay):
    opts = IntegratorOptions(method="rk4", initial_step=0.01)
    traj = integrate(decay, [1.0], None, (0.0, 1.0), opts, events=[Event(0.5, parameters={0: 2.0})])
    assert traj.sample([0.5])[0, 0] == pytest.approx(math.exp(-0.5), abs=1e-8)
    assert traj.final_state[0] == pytest.approx(math.exp(-1.5), abs=1e-7)


def test_event_at_start_applies_immediately(decay):
    opts = IntegratorOptions(method="rk4", initial_step=0.01)
    traj = integrate(decay, [1.0], None, (0.0, 1.0), opts, events=[Event(0.0, parameters={0: 3.0})])
    assert traj.final_state[0] == pytest.approx(math.exp(-3.0), abs=1e-7)


def test_input_event(swing):
    runner = BlockRunner(bs.compile(swing), {"P_m": 1.0, "P_e": 1.0})
    opts = IntegratorOptions(method="rk4", initial_step=0.01)
    traj = integrate(runner, [0.0], None, (0.0, 3.0), opts, events=[Event(1.0, inputs={"P_e": 1.1})])
    assert traj.sample([1.0])[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert traj.final_state[0] == pytest.approx(-0.1 * (1 - math.exp(-2.0)), abs=1e-8)


def test_trajectory_csv(decay, tmp_path):
    traj = integrate(decay, [1.0], None, (0.0, 1.0), IntegratorOptions(method="rk4", initial_step=0.25))
    path = traj.to_csv(tmp_path / "decay.csv")
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "t,x"
    assert len(lines) == 6
    assert lines[1] == "0,1"


@pytest.mark.parametrize("method", ["rk4", "trapezoid"])
def test_parameter_tangents_match_finite_differences(decay, method):
    opts = IntegratorOptions(method=method, initial_step=0.01)

    def final(k):
        return integrate(decay, [1.0], [k], (0.0, 1.0), opts).final_state[0]

    traced = final(dual.seed([0.8])[0])
    h = 1e-6
    numeric = (final(0.8 + h) - final(0.8 - h)) / (2 * h)
    assert traced.value == pytest.approx(final(0.8), rel=1e-12)
    assert traced.tangent[0] == pytest.approx(numeric, rel=1e-5)


def test_adaptive_tangent_matches_exact_sensitivity(decay):
    opts = IntegratorOptions(method="dopri45", initial_step=0.01, rel_tol=1e-10, abs_tol=1e-12)
    traj = integrate(decay, [1.0], dual.seed([0.8]), (0.0, 1.0), opts)
    assert traj.final_state[0].tangent[0] == pytest.approx(-math.exp(-0.8), rel=1e-6)


def test_tangents_flow_through_events(decay):
    opts = IntegratorOptions(method="trapezoid", initial_step=0.01)
    k = dual.seed([2.0])[0]
    traj = integrate(decay, [1.0], [1.0], (0.0, 1.0), opts, events=[Event(0.5, parameters={0: k})])
    final = traj.final_state[0]
    assert isinstance(final, dual.Dual)
    # x(1) ≈ e^{-0.5} e^{-0.5 k}, so dx/dk ≈ -0.5 x(1)
    assert final.tangent[0] == pytest.approx(-0.5 * final.value, rel=1e-3)


def test_dopri45_closes_interval_with_a_tiny_last_step(decay):
    # three capped steps end 1e-7 short of the interval end
    opts = IntegratorOptions(
        method="dopri45", initial_step=0.3, max_step=0.3, min_step=1e-6, rel_tol=1e-3, abs_tol=1e-6
    )
    end = 0.9 + 1e-7
    traj = integrate(decay, [1.0], None, (0.0, end), opts)
    assert traj.times[-1] == end
    assert traj.final_state[0] == pytest.approx(math.exp(-end), rel=1e-4)


def test_dopri45_midpoints_match_fine_rk4(swing_pid):
    runner = BlockRunner(bs.compile(swing_pid, state_order=["ω", "int"]), {"P_e": 0.9})
    adaptive = integrate(
        runner,
        [0.0, 0.0],
        None,
        (0.0, 10.0),
        IntegratorOptions(method="dopri45", initial_step=0.05, max_step=0.25, rel_tol=1e-8, abs_tol=1e-10),
    )
    reference = integrate(runner, [0.0, 0.0], None, (0.0, 10.0), IntegratorOptions(method="rk4", initial_step=0.025))
    midpoints = (adaptive.times[:-1] + adaptive.times[1:]) / 2
    assert len(midpoints) >= 40
    error = np.abs(adaptive.sample(midpoints) - reference.sample(midpoints))
    assert error.max() < 1e-5


@pytest.fixture(scope="module")
def five_bus():
    net = pl.load_network(NETWORKS / "five_bus_system.yaml")
    p = net.default_parameters()
    opts = IntegratorOptions(method="trapezoid", initial_step=0.1, newton_tol=1e-12)
    return net, p, find_steady_state(net, initial_guess(net), p, options=opts)


def test_five_bus_steady_state_does_not_drift(five_bus):
    net, p, x0 = five_bus
    assert np.abs(net.rhs(x0, p)).max() < 1e-10
    opts = IntegratorOptions(method="trapezoid", initial_step=0.1, newton_tol=1e-12)
    traj = integrate(net, x0, p, (0.0, 10.0), opts)
    assert np.abs(traj.states - x0).max() < 1e-8


def test_trapezoid_keeps_five_bus_constraints_through_a_load_step(five_bus):
    net, p, x0 = five_bus
    opts = IntegratorOptions(method="trapezoid", initial_step=0.05)
    step = pl.LoadDisturbance(4, -0.1, 1.0).event(net)
    traj = integrate(net, x0, p, (0.0, 10.0), opts, events=[step])
    algebraic = np.flatnonzero(net.mass == 0)
    assert len(algebraic) == 10
    residual = max(np.abs(net.rhs(x, p)[algebraic]).max() for x in traj.states)
    assert residual < 1e-9
    # the step moves every bus off the pre-fault frequency
    assert np.abs(traj.final_state[net.indices_of("ω")]).min() > 1e-4
