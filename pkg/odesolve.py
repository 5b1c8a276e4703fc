"""
Integrators for mass-matrix systems ``M·dx/dt = f(x, p, t)``.

Three methods are available: classic fixed-step Runge-Kutta (``rk4``), the
adaptive Dormand-Prince 4(5) pair (``dopri45``), and a fixed-step implicit
trapezoid rule (``trapezoid``) which is required whenever the mass diagonal
holds zeros (algebraic rows).

A system is anything with ``dimension``, ``mass``, ``state_names`` and
``rhs(x, p, t)``; ``BlockRunner`` adapts a compiled block, and
``netdyn.NetworkSystem`` implements the protocol directly.

States and parameters may be ``dual.Dual`` arrays. The explicit methods carry
the duals through their arithmetic; the trapezoid rule solves on primal values
and propagates tangents through the same linear systems as Newton.
"""

import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

import dual
from errors import (
    DimensionMismatch,
    DomainError,
    InconsistentInitialCondition,
    InvalidParameter,
    NewtonDivergence,
    OutOfRange,
    StepSizeUnderflow,
)
from logger_config import logger

RK4 = "rk4"
DOPRI45 = "dopri45"
TRAPEZOID = "trapezoid"

_ALIASES = {
    "rk4": RK4,
    "rk4-fixed": RK4,
    "dopri45": DOPRI45,
    "dopri45-adaptive": DOPRI45,
    "trapezoid": TRAPEZOID,
    "implicit-trapezoid": TRAPEZOID,
}

MAX_HALVINGS = 5
SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0


@dataclass
class IntegratorOptions:
    method: str = DOPRI45
    rel_tol: float = 1e-6
    abs_tol: float = 1e-8
    max_step: float = math.inf
    initial_step: float = 0.01
    newton_tol: float = 1e-10
    newton_max_iters: int = 25
    min_step: float = 1e-12
    max_steps: int = 1_000_000

    def __post_init__(self):
        method = _ALIASES.get(str(self.method).lower())
        if method is None:
            raise InvalidParameter(f"unknown integration method {self.method!r}")
        self.method = method
        for name in ("rel_tol", "abs_tol", "max_step", "initial_step", "newton_tol", "min_step"):
            value = getattr(self, name)
            if not value > 0:
                raise InvalidParameter(f"{name} must be positive, got {value}")
        if self.newton_max_iters < 1:
            raise InvalidParameter("newton_max_iters must be at least 1")


@dataclass(frozen=True)
class Event:
    """Parameter (by flat index) and input (by name) values taking effect at ``time``."""

    time: float
    parameters: Mapping[int, float] = field(default_factory=dict)
    inputs: Mapping[str, float] = field(default_factory=dict)


class BlockRunner:
    """Runs a ``CompiledBlock`` with constant input values as an ``rhs(x, p, t)`` system."""

    def __init__(self, compiled, inputs: Union[Mapping[str, float], Sequence[float], None] = None):
        self.compiled = compiled
        values = np.zeros(len(compiled.input_order), dtype=object)
        values[:] = 0.0
        if isinstance(inputs, Mapping):
            for name, value in inputs.items():
                values[compiled.input_index(name)] = value
        elif inputs is not None:
            if len(inputs) != len(values):
                raise DimensionMismatch(
                    f"{compiled.name} takes {len(values)} inputs, got {len(inputs)}"
                )
            values[:] = list(inputs)
        self.inputs = values

    @property
    def dimension(self) -> int:
        return self.compiled.dimension

    @property
    def mass(self) -> np.ndarray:
        return self.compiled.mass

    @property
    def state_names(self) -> List[str]:
        return self.compiled.state_names

    def default_parameters(self) -> np.ndarray:
        return self.compiled.parameter_vector()

    def rhs(self, x, p, t: float = 0.0):
        return self.compiled.rhs(x, self.inputs, p, t)

    def with_inputs(self, updates: Mapping[str, float]) -> "BlockRunner":
        values = {s.qualified: v for s, v in zip(self.compiled.input_order, self.inputs)}
        values.update(updates)
        return BlockRunner(self.compiled, values)


def as_system(system):
    if hasattr(system, "rhs") and hasattr(system, "mass") and not hasattr(system, "input_order"):
        return system
    if hasattr(system, "input_order"):
        return BlockRunner(system)
    raise TypeError(f"{type(system).__name__} is not an integrable system")


# trajectories


class _Segment:
    def __init__(self):
        self.times: List[float] = []
        self.states: list = []
        self.derivatives: list = []

    def add(self, t, x, dx):
        self.times.append(float(t))
        self.states.append(x)
        self.derivatives.append(dx)

    def freeze(self):
        self.times = np.array(self.times)
        self.states = _stack(self.states)
        self.derivatives = _stack(self.derivatives)


def _stack(rows) -> np.ndarray:
    if any(r.dtype == object for r in rows):
        out = np.empty((len(rows), len(rows[0])), dtype=object)
        for k, r in enumerate(rows):
            out[k, :] = list(r)
        return out
    return np.array(rows, dtype=float)


class Trajectory:
    """Knots of an integration with cubic Hermite interpolation between them.

    Differential rows use the stored derivatives; algebraic rows are
    interpolated linearly. At event times the post-event state is kept.
    """

    def __init__(self, state_names: Sequence[str], mass: np.ndarray, segments: List[_Segment]):
        self.state_names = list(state_names)
        self.mass = np.asarray(mass)
        self._segments = segments
        times, states = [], []
        for k, seg in enumerate(segments):
            last = len(seg.times) if k == len(segments) - 1 else len(seg.times) - 1
            times.extend(seg.times[:last])
            states.extend(seg.states[:last])
        self.times = np.array(times)
        self.states = _stack(states)

    @property
    def span(self) -> Tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def column(self, name: str) -> np.ndarray:
        return self.states[:, self.state_names.index(name)]

    def sample(self, times) -> np.ndarray:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        t0, t1 = self.span
        slack = 1e-12 * max(1.0, abs(t0), abs(t1))
        if np.any(times < t0 - slack) or np.any(times > t1 + slack):
            raise OutOfRange(f"sample times must lie within [{t0}, {t1}]")
        rows = [self._at(min(max(t, t0), t1)) for t in times]
        return _stack(rows)

    def _at(self, t: float):
        seg = self._segments[0]
        for candidate in self._segments[1:]:
            if candidate.times[0] <= t:
                seg = candidate
        knots = seg.times
        j = int(np.searchsorted(knots, t, side="right")) - 1
        j = min(max(j, 0), len(knots) - 1)
        if knots[j] == t:
            return seg.states[j]
        if j == len(knots) - 1:
            return seg.states[j]
        if knots[j + 1] == t:
            return seg.states[j + 1]
        h = knots[j + 1] - knots[j]
        s = (t - knots[j]) / h
        y0, y1 = seg.states[j], seg.states[j + 1]
        d0, d1 = seg.derivatives[j], seg.derivatives[j + 1]
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        linear = (1 - s) * y0 + s * y1
        differential = self.mass != 0
        if not differential.any():
            return linear
        hermite = h00 * y0 + (h10 * h) * d0 + h01 * y1 + (h11 * h) * d1
        if differential.all():
            return hermite
        return np.where(differential, hermite, linear)

    def frame(self, times=None) -> Tuple[List[str], list]:
        """Header and rows (time first) at ``times`` or at the stored knots."""
        if times is None:
            times, states = self.times, self.states
        else:
            times = np.asarray(times, dtype=float)
            states = self.sample(times)
        header = ["t"] + self.state_names
        rows = [[t] + list(dual.primal_array(row)) for t, row in zip(times, states)]
        return header, rows

    def to_csv(self, path, times=None):
        from export import write_csv

        header, rows = self.frame(times)
        return write_csv(path, header, rows)


def sample(trajectory: Trajectory, times) -> np.ndarray:
    return trajectory.sample(times)


def trajectory_frame(trajectory: Trajectory, times=None):
    return trajectory.frame(times)


# linear algebra on the primal system


class _Model:
    """A system bound to one parameter vector, split into primal and tangent parts."""

    def __init__(self, system, p, size: int):
        self.system = system
        self.size = size
        self.mass = np.asarray(system.mass, dtype=float)
        self.differential = self.mass != 0
        self.algebraic = ~self.differential
        self.p = p
        self.p_primal, self.p_tangent = dual.split(p, size)

    def f(self, x, t: float) -> np.ndarray:
        return dual.primal_array(self.system.rhs(x, self.p_primal, t))

    def linearize(self, x: np.ndarray, t: float, with_parameters: bool = False):
        """Return ``f``, ``df/dx`` and (optionally) ``df/dp · p_tangent`` at primal ``x``."""
        n = len(x)
        k = self.size if with_parameters else 0
        eye = np.eye(n + k)
        xs = np.array([dual.Dual(v, eye[i]) for i, v in enumerate(x)], dtype=object)
        if k:
            padded = np.hstack([np.zeros((len(self.p_primal), n)), self.p_tangent])
            ps = dual.join(self.p_primal, padded)
        else:
            ps = self.p_primal
        values, tangents = dual.split(self.system.rhs(xs, ps, t), n + k)
        return values, tangents[:, :n], tangents[:, n:]


def _solve(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    return np.linalg.solve(matrix, rhs)


def _norm(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if len(v) else 0.0


def _project(model: _Model, x: np.ndarray, X: Optional[np.ndarray], t: float, opts: IntegratorOptions):
    """Newton projection of algebraic rows with the differential rows held fixed."""
    alg = model.algebraic
    if not alg.any():
        return x, X
    x = x.copy()
    for iteration in range(opts.newton_max_iters + 1):
        try:
            g = model.f(x, t)[alg]
        except DomainError as exc:
            raise InconsistentInitialCondition(f"cannot evaluate constraints at t={t}: {exc}") from exc
        residual = _norm(g)
        if residual <= opts.newton_tol:
            break
        if iteration == opts.newton_max_iters:
            raise InconsistentInitialCondition(
                f"constraint residual {residual:.3e} at t={t} after {iteration} Newton iterations"
            )
        _, A, _ = model.linearize(x, t)
        try:
            step = _solve(A[np.ix_(alg, alg)], -g)
        except np.linalg.LinAlgError as exc:
            raise InconsistentInitialCondition(f"singular constraint Jacobian at t={t}") from exc
        lam = 1.0
        while lam > 1e-3:
            trial = x.copy()
            trial[alg] += lam * step
            try:
                if _norm(model.f(trial, t)[alg]) < residual:
                    break
            except DomainError:
                pass
            lam /= 2
        x = trial
    if iteration:
        logger.debug(f"Projected algebraic rows at t={t:.6g} in {iteration} Newton iterations")
    if X is not None and model.size:
        _, A, fp = model.linearize(x, t, with_parameters=True)
        diff = model.differential
        X = X.copy()
        X[alg] = -_solve(A[np.ix_(alg, alg)], A[np.ix_(alg, diff)] @ X[diff] + fp[alg])
    return x, X


def find_steady_state(
    system,
    guess,
    p=None,
    t: float = 0.0,
    options: Optional[IntegratorOptions] = None,
    max_iters: int = 100,
) -> np.ndarray:
    """Solve ``0 = f(x, p, t)`` over all rows with damped least-squares Newton steps."""
    system = as_system(system)
    opts = options or IntegratorOptions()
    if p is None:
        p = system.default_parameters()
    model = _Model(system, dual.primal_array(np.asarray(p, dtype=object)), 0)
    x = dual.primal_array(np.asarray(guess, dtype=object)).astype(float)
    if len(x) != system.dimension:
        raise DimensionMismatch(f"guess has {len(x)} entries, system has {system.dimension}")
    if not np.all(np.isfinite(x)):
        raise NewtonDivergence("steady-state guess is not finite")
    f = model.f(x, t)
    for iteration in range(max_iters):
        residual = _norm(f)
        if residual < opts.newton_tol:
            logger.debug(f"Steady state found in {iteration} iterations (residual {residual:.3e})")
            return x
        _, A, _ = model.linearize(x, t)
        step = np.linalg.lstsq(A, -f, rcond=None)[0]
        lam = 1.0
        while True:
            trial = x + lam * step
            try:
                trial_f = model.f(trial, t)
                if _norm(trial_f) < residual:
                    break
            except DomainError:
                pass
            lam /= 2
            if lam < 1e-6:
                raise NewtonDivergence(
                    f"steady-state Newton stalled at residual {residual:.3e} after {iteration} iterations"
                )
        x, f = trial, trial_f
    raise NewtonDivergence(
        f"steady-state Newton did not converge in {max_iters} iterations (residual {_norm(f):.3e})"
    )


# fixed-step and adaptive explicit methods


def _check_finite(x, t):
    if not np.all(np.isfinite(dual.primal_array(x))):
        raise DomainError(f"non-finite state at t={t:.6g}")


def _fixed_steps(a: float, b: float, opts: IntegratorOptions) -> Tuple[int, float]:
    h = min(opts.initial_step, opts.max_step)
    n = max(1, int(math.ceil((b - a) / h - 1e-9)))
    return n, (b - a) / n


def _rk4(system, p, x, a: float, b: float, opts: IntegratorOptions, seg: _Segment):
    f = lambda y, t: system.rhs(y, p, t)
    n, h = _fixed_steps(a, b, opts)
    k1 = f(x, a)
    seg.add(a, x, k1)
    for step in range(n):
        t = a + step * h
        k2 = f(x + (h / 2) * k1, t + h / 2)
        k3 = f(x + (h / 2) * k2, t + h / 2)
        k4 = f(x + h * k3, t + h)
        x = x + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        t = b if step == n - 1 else a + (step + 1) * h
        _check_finite(x, t)
        k1 = f(x, t)
        seg.add(t, x, k1)
    return x


_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)
_ALPHA = 0.7 / 5
_BETA = 0.4 / 5


def _dopri45(system, p, x, a: float, b: float, opts: IntegratorOptions, seg: _Segment):
    f = lambda y, t: system.rhs(y, p, t)
    t = a
    h = min(opts.initial_step, opts.max_step, b - a)
    previous_error = 1.0
    k1 = f(x, t)
    seg.add(t, x, k1)
    steps = rejected = 0
    while t < b:
        if steps >= opts.max_steps:
            raise StepSizeUnderflow(f"exceeded {opts.max_steps} steps at t={t:.6g}")
        last = t + h >= b - 1e-12 * max(1.0, abs(b))
        if last:
            h = b - t
        stages = [k1]
        for i in range(1, 7):
            increment = sum((coef * k for coef, k in zip(_A[i], stages) if coef != 0.0))
            stages.append(f(x + h * increment, t + _C[i] * h))
        x_new = x + h * sum(coef * k for coef, k in zip(_A[6], stages[:6]) if coef != 0.0)
        error = h * sum(coef * dual.primal_array(k) for coef, k in zip(_E, stages) if coef != 0.0)
        xp, xnp = dual.primal_array(x), dual.primal_array(x_new)
        scale = opts.abs_tol + opts.rel_tol * np.maximum(np.abs(xp), np.abs(xnp))
        err = float(np.sqrt(np.mean((error / scale) ** 2))) if len(xp) else 0.0
        if not math.isfinite(err):
            err = math.inf
        if err <= 1.0:
            t = b if last else t + h
            x = x_new
            _check_finite(x, t)
            k1 = stages[6]
            seg.add(t, x, k1)
            steps += 1
            if err == 0.0:
                factor = MAX_FACTOR
            else:
                factor = SAFETY * err ** (-_ALPHA) * previous_error ** _BETA
            previous_error = max(err, 1e-4)
            h = h * min(MAX_FACTOR, max(MIN_FACTOR, factor))
        else:
            rejected += 1
            factor = SAFETY * err ** (-_ALPHA) if math.isfinite(err) else MIN_FACTOR
            h = h * min(1.0, max(MIN_FACTOR, factor))
        if t >= b:
            break
        # a step that closes the interval may be shorter than min_step
        h = min(h, opts.max_step, b - t)
        if h < b - t and h < opts.min_step * max(1.0, abs(t)):
            raise StepSizeUnderflow(f"step size {h:.3e} below minimum at t={t:.6g}")
    logger.debug(f"dopri45 on [{a:.6g}, {b:.6g}]: {steps} steps, {rejected} rejected")
    return x


# implicit trapezoid


class _Trapezoid:
    """Fixed-step trapezoid rule on differential rows, exact constraints on algebraic rows."""

    def __init__(self, model: _Model, opts: IntegratorOptions, seg: _Segment):
        self.model = model
        self.opts = opts
        self.seg = seg
        self.halvings = 0

    def _knot(self, t, x, X, f, F):
        if X is None:
            self.seg.add(t, x, f)
        else:
            self.seg.add(t, dual.join(x, X), dual.join(f, F))

    def run(self, x: np.ndarray, X: Optional[np.ndarray], a: float, b: float):
        model = self.model
        tangents = X is not None and model.size > 0
        f0, A, fp = model.linearize(x, a, with_parameters=tangents)
        F0 = A @ X + fp if tangents else None
        self._knot(a, x, X, f0, F0)
        n, h = _fixed_steps(a, b, self.opts)
        state = (x, X if tangents else None, f0, F0, A)
        for step in range(n):
            t = a + step * h
            t_next = b if step == n - 1 else a + (step + 1) * h
            state = self._advance(t, t_next, state, 0)
        if self.halvings:
            logger.warning(f"trapezoid on [{a:.6g}, {b:.6g}] halved the step {self.halvings} times")
        return state[0], state[1]

    def _advance(self, t: float, t_next: float, state, depth: int):
        x0, X0, f0, F0, A = state
        h = t_next - t
        try:
            x1, A = self._newton(x0, f0, t_next, h, A)
        except (NewtonDivergence, DomainError) as exc:
            if depth >= MAX_HALVINGS:
                raise NewtonDivergence(
                    f"Newton failed at t={t:.6g} after {MAX_HALVINGS} step halvings: {exc}"
                ) from exc
            self.halvings += 1
            logger.debug(f"Halving step at t={t:.6g} (h={h:.3e}): {exc}")
            middle = t + h / 2
            state = self._advance(t, middle, state, depth + 1)
            return self._advance(middle, t_next, state, depth + 1)
        model = self.model
        if X0 is None:
            f1 = model.f(x1, t_next)
            self._knot(t_next, x1, None, f1, None)
            return x1, None, f1, None, A
        f1, A1, fp1 = model.linearize(x1, t_next, with_parameters=True)
        mass = model.mass
        weight = np.where(model.differential, h / 2, 1.0)
        jacobian = np.diag(mass) - weight[:, None] * A1
        rhs = mass[:, None] * X0 + weight[:, None] * fp1 + (h / 2) * mass[:, None] * F0
        X1 = _solve(jacobian, rhs)
        F1 = A1 @ X1 + fp1
        self._knot(t_next, x1, X1, f1, F1)
        return x1, X1, f1, F1, A1

    def _newton(self, x0, f0, t1, h, A):
        """Chord Newton for ``M·x - w·f(x) = M·x0 + (h/2)·M·f0`` with damping."""
        model, opts = self.model, self.opts
        mass = model.mass
        weight = np.where(model.differential, h / 2, 1.0)
        constant = mass * x0 + (h / 2) * mass * f0

        def residual(x):
            return mass * x - weight * model.f(x, t1) - constant

        def jacobian(A):
            return np.diag(mass) - weight[:, None] * A

        J = jacobian(A)
        x = x0 + h * mass * f0
        F = residual(x)
        norm = _norm(F)
        fresh = False
        for _ in range(opts.newton_max_iters):
            if norm <= opts.newton_tol:
                return x, A
            try:
                dx = _solve(J, -F)
            except np.linalg.LinAlgError:
                if fresh:
                    raise NewtonDivergence(f"singular Newton matrix at t={t1:.6g}")
                _, A, _ = model.linearize(x, t1)
                J, fresh = jacobian(A), True
                continue
            lam = 1.0
            trial_norm = math.inf
            while lam >= 1 / 64:
                trial = x + lam * dx
                try:
                    trial_F = residual(trial)
                    trial_norm = _norm(trial_F)
                except DomainError:
                    trial_norm = math.inf
                if trial_norm < norm:
                    break
                lam /= 2
            if not trial_norm < norm:
                if fresh:
                    raise NewtonDivergence(
                        f"Newton made no progress at t={t1:.6g} (residual {norm:.3e})"
                    )
                _, A, _ = model.linearize(x, t1)
                J, fresh = jacobian(A), True
                continue
            slow = trial_norm > 0.5 * norm
            x, F, norm = trial, trial_F, trial_norm
            if slow and not fresh:
                _, A, _ = model.linearize(x, t1)
                J, fresh = jacobian(A), True
            else:
                fresh = False
        if norm <= opts.newton_tol:
            return x, A
        raise NewtonDivergence(
            f"Newton did not converge in {opts.newton_max_iters} iterations at t={t1:.6g} "
            f"(residual {norm:.3e})"
        )


# driver


def _apply(system, p, event: Event):
    if event.inputs:
        if not hasattr(system, "with_inputs"):
            raise InvalidParameter(f"{type(system).__name__} has no inputs to change")
        system = system.with_inputs(event.inputs)
    if event.parameters:
        p = np.array(list(p), dtype=object)
        for index, value in event.parameters.items():
            if not 0 <= index < len(p):
                raise InvalidParameter(f"event parameter index {index} out of range")
            p[index] = value
        p = dual.as_state_array(p)
    return system, p


def integrate(
    system,
    x0,
    p,
    tspan: Tuple[float, float],
    options: Optional[IntegratorOptions] = None,
    events: Sequence[Event] = (),
) -> Trajectory:
    """Integrate ``system`` over ``tspan`` from ``x0`` with parameters ``p``."""
    started = time.perf_counter()
    system = as_system(system)
    opts = options or IntegratorOptions()
    t0, t1 = float(tspan[0]), float(tspan[1])
    if not t1 > t0:
        raise InvalidParameter(f"integration span must be increasing, got [{t0}, {t1}]")
    mass = np.asarray(system.mass, dtype=float)
    if (mass == 0).any() and opts.method != TRAPEZOID:
        raise InvalidParameter(
            f"system has algebraic rows; method {opts.method} cannot integrate it, use trapezoid"
        )
    x = dual.as_state_array(list(np.asarray(x0, dtype=object)))
    if len(x) != system.dimension:
        raise DimensionMismatch(f"x0 has {len(x)} entries, system has {system.dimension}")
    if p is None:
        p = system.default_parameters()
    p = dual.as_state_array(list(np.asarray(p, dtype=object)))
    events = sorted(events, key=lambda e: e.time)
    size = max(
        [dual.tangent_size(x), dual.tangent_size(p)]
        + [dual.tangent_size(list(e.parameters.values())) for e in events if e.parameters]
    )

    for event in events:
        if event.time <= t0:
            system, p = _apply(system, p, event)
    boundaries = sorted({e.time for e in events if t0 < e.time < t1})
    edges = [t0] + boundaries + [t1]

    segments: List[_Segment] = []
    if opts.method == TRAPEZOID:
        xp, X = dual.split(x, size)
        X = X if size else None
    for a, b in zip(edges[:-1], edges[1:]):
        if a > t0:
            for event in events:
                if event.time == a:
                    system, p = _apply(system, p, event)
        seg = _Segment()
        if opts.method == TRAPEZOID:
            model = _Model(system, p, size)
            xp, X = _project(model, xp, X, a, opts)
            xp, X = _Trapezoid(model, opts, seg).run(xp, X, a, b)
        elif opts.method == RK4:
            x = _rk4(system, p, x, a, b, opts, seg)
        else:
            x = _dopri45(system, p, x, a, b, opts, seg)
        seg.freeze()
        segments.append(seg)

    trajectory = Trajectory(system.state_names, mass, segments)
    logger.debug(
        f"Integrated {system.dimension} states over [{t0:.6g}, {t1:.6g}] with {opts.method}: "
        f"{len(trajectory.times)} knots in {(time.perf_counter() - started) * 1000:.1f}ms"
    )
    return trajectory


__all__ = [
    "IntegratorOptions",
    "Event",
    "BlockRunner",
    "Trajectory",
    "integrate",
    "find_steady_state",
    "sample",
    "trajectory_frame",
    "as_system",
    "RK4",
    "DOPRI45",
    "TRAPEZOID",
]
