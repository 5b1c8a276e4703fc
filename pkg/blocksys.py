"""
Input/output equation blocks and their composition.

An ``IOBlock`` is a named set of differential, explicit-algebraic and implicit
equations with declared inputs and outputs. Blocks are wired into an
``IOSystem`` with ``connect`` and flattened back into a single block with
``connect_system``:

1. every symbol is namespaced with its block name (then promoted), and each
   connected input is replaced by a reference to the source output;
2. explicit-algebraic states that are not outputs are substituted away;
3. time derivatives are expanded with the chain rule, using the differential
   equations themselves (solving equations that are linear in their own
   derivative, as in a PID acting on the derivative of its input).

Flat blocks compile into a ``CompiledBlock``: a mass-matrix evaluator
``M·dx/dt = f(x, i, p, t)`` backed by a common-subexpression instruction tape
that works with floats and ``dual.Dual`` scalars alike.
"""

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

import dual
import symcore as sc
from errors import (
    CyclicAlgebraicDependency,
    DanglingEndpoint,
    DomainError,
    DoublyDrivenInput,
    DuplicateDefinition,
    InvalidEquation,
    InvalidParameter,
    NameCollision,
    OutputWithoutEquation,
    ParseError,
    UnboundSymbol,
    UndeclaredInput,
    UnresolvableDerivative,
)
from logger_config import logger

SUBSTITUTION_CAP = 100

SymbolLike = Union[sc.Symbol, str]


class EquationKind(Enum):
    DIFFERENTIAL = "differential"
    EXPLICIT = "explicit"
    IMPLICIT = "implicit"


@dataclass(frozen=True)
class Equation:
    """``D(state) = rhs``, ``state = rhs`` or ``0 = rhs`` (implicit)."""

    kind: EquationKind
    rhs: sc.Expr
    state: Optional[sc.Symbol] = None

    def renamed(self, mapping: Mapping) -> "Equation":
        state = self.state
        if state is not None:
            target = mapping.get(sc.Var(state))
            state = target.symbol if isinstance(target, sc.Var) else state
        return Equation(self.kind, sc.substitute(self.rhs, mapping), state)

    def with_rhs(self, rhs: sc.Expr) -> "Equation":
        return Equation(self.kind, rhs, self.state)


def _state(symbol: SymbolLike) -> sc.Symbol:
    if isinstance(symbol, str):
        return sc.Symbol.state(symbol)
    if symbol.kind is not sc.SymbolKind.STATE:
        raise InvalidEquation(f"{symbol.qualified} is a {symbol.kind.value}, not a state")
    return symbol


def differential(state: SymbolLike, rhs: sc.ExprLike) -> Equation:
    return Equation(EquationKind.DIFFERENTIAL, sc.as_expr(rhs), _state(state))


def explicit(state: SymbolLike, rhs: sc.ExprLike) -> Equation:
    return Equation(EquationKind.EXPLICIT, sc.as_expr(rhs), _state(state))


def implicit(rhs: sc.ExprLike, state: Optional[SymbolLike] = None) -> Equation:
    return Equation(
        EquationKind.IMPLICIT, sc.as_expr(rhs), None if state is None else _state(state)
    )


@dataclass(frozen=True)
class IOBlock:
    name: str
    equations: Tuple[Equation, ...]
    inputs: Tuple[sc.Symbol, ...]
    outputs: Tuple[sc.Symbol, ...]
    defaults: Dict[sc.Symbol, float] = field(default_factory=dict)

    @property
    def states(self) -> Tuple[sc.Symbol, ...]:
        return tuple(eq.state for eq in self.equations)

    @property
    def internal_states(self) -> Tuple[sc.Symbol, ...]:
        outputs = set(self.outputs)
        return tuple(s for s in self.states if s not in outputs)

    @property
    def parameters(self) -> Tuple[sc.Symbol, ...]:
        found = set(self.defaults)
        for eq in self.equations:
            found.update(s for s in sc.free_symbols(eq.rhs) if s.kind is sc.SymbolKind.PARAMETER)
        return tuple(sorted(found, key=sc.symbol_sort_key))

    def equation_for(self, state: SymbolLike) -> Equation:
        state = _state(state)
        for eq in self.equations:
            if eq.state == state:
                return eq
        raise KeyError(state.qualified)

    def is_flat(self) -> bool:
        return not any(sc.contains_derivative(eq.rhs) for eq in self.equations)


def _as_symbol(value: SymbolLike, kind: sc.SymbolKind) -> sc.Symbol:
    if isinstance(value, sc.Symbol):
        return value
    return sc.Symbol.from_qualified(value, kind)


def make_block(
    name: str,
    equations: Sequence[Equation],
    inputs: Iterable[SymbolLike] = (),
    outputs: Iterable[SymbolLike] = (),
    defaults: Optional[Mapping[SymbolLike, float]] = None,
) -> IOBlock:
    """Validate equations and declarations and build an ``IOBlock``.

    States are the left-hand sides, the outputs, and any state symbol used on a
    right-hand side. Implicit constraints without a named state cover the
    remaining undefined states in order of first appearance.
    """
    if not name or "." in name:
        raise InvalidEquation(f"invalid block name {name!r}")
    inputs = tuple(_as_symbol(s, sc.SymbolKind.INPUT) for s in inputs)
    outputs = tuple(_state(s) for s in outputs)
    for symbol in inputs:
        if symbol.kind is not sc.SymbolKind.INPUT:
            raise InvalidEquation(f"{symbol.qualified} declared as input but is a {symbol.kind.value}")

    defined: Dict[sc.Symbol, Equation] = {}
    anonymous: List[Equation] = []
    mentioned: List[sc.Symbol] = []
    for eq in equations:
        if eq.kind is not EquationKind.IMPLICIT and eq.state is None:
            raise InvalidEquation(f"{eq.kind.value} equation without a state")
        if eq.state is not None:
            if eq.state in defined:
                raise DuplicateDefinition(f"state {eq.state.qualified} is defined twice in {name}")
            if eq.kind is EquationKind.EXPLICIT and eq.state in sc.free_symbols(eq.rhs):
                raise InvalidEquation(
                    f"explicit equation for {eq.state.qualified} depends on itself"
                )
            defined[eq.state] = eq
        else:
            anonymous.append(eq)
        for symbol in sorted(sc.free_symbols(eq.rhs), key=sc.symbol_sort_key):
            if symbol.kind is sc.SymbolKind.INPUT and symbol not in inputs:
                raise UndeclaredInput(f"input {symbol.qualified} is not declared in {name}")
            if symbol.kind is sc.SymbolKind.STATE and symbol not in mentioned:
                mentioned.append(symbol)

    undefined = [s for s in outputs if s not in defined]
    undefined += [s for s in mentioned if s not in defined and s not in undefined]
    if len(undefined) != len(anonymous):
        missing = [s for s in undefined[len(anonymous):] if s in outputs]
        if missing:
            raise OutputWithoutEquation(
                f"output {missing[0].qualified} of {name} has no defining equation"
            )
        raise InvalidEquation(
            f"{name}: {len(anonymous)} implicit constraints for {len(undefined)} undefined states"
        )
    for symbol, eq in zip(undefined, anonymous):
        defined[symbol] = Equation(EquationKind.IMPLICIT, eq.rhs, symbol)

    ordered = []
    covered = iter(undefined)
    for eq in equations:
        state = eq.state if eq.state is not None else next(covered)
        ordered.append(defined[state])

    _check_names(name, inputs, [eq.state for eq in ordered], ordered)
    values = {_as_symbol(k, sc.SymbolKind.PARAMETER): float(v) for k, v in (defaults or {}).items()}
    return IOBlock(name, tuple(ordered), inputs, outputs, values)


def _check_names(name, inputs, states, equations):
    seen: Dict[str, sc.Symbol] = {}
    symbols = list(inputs) + list(states)
    for eq in equations:
        symbols.extend(sc.free_symbols(eq.rhs))
    for symbol in symbols:
        other = seen.setdefault(symbol.qualified, symbol)
        if other != symbol:
            raise NameCollision(
                f"{name}: {symbol.qualified} is used as both {other.kind.value} and {symbol.kind.value}"
            )


@dataclass(frozen=True)
class IOSystem:
    """Blocks plus wiring; every symbol is addressed by its namespaced form."""

    name: str
    blocks: Tuple[IOBlock, ...]
    connections: Tuple[Tuple[sc.Symbol, sc.Symbol], ...]
    outputs: Tuple[sc.Symbol, ...]
    renames: Dict[sc.Symbol, sc.Symbol]

    @property
    def connected_inputs(self) -> Dict[sc.Symbol, sc.Symbol]:
        return {target: source for source, target in self.connections}

    @property
    def open_inputs(self) -> Tuple[sc.Symbol, ...]:
        connected = self.connected_inputs
        return tuple(
            self.renames.get(s, s)
            for block in self.blocks
            for s in (i.prefixed(block.name) for i in block.inputs)
            if s not in connected
        )

    @property
    def promoted_outputs(self) -> Tuple[sc.Symbol, ...]:
        return tuple(self.renames.get(s, s) for s in self.outputs)


def _endpoint(blocks: Mapping[str, IOBlock], endpoint: SymbolLike, role: str) -> sc.Symbol:
    text = endpoint.qualified if isinstance(endpoint, sc.Symbol) else endpoint
    block_name, _, local = text.partition(".")
    block = blocks.get(block_name)
    if block is None or not local:
        raise DanglingEndpoint(f"{text} does not name a block member")
    candidates = block.outputs if role == "output" else block.inputs
    for symbol in candidates:
        if symbol.qualified == local:
            return symbol.prefixed(block_name)
    raise DanglingEndpoint(f"{text} is not an {role} of block {block_name}")


def _strip(symbol: sc.Symbol) -> sc.Symbol:
    return sc.Symbol(symbol.name, symbol.namespace[1:], symbol.kind)


def connect(
    blocks: Sequence[IOBlock],
    connections: Union[Mapping[SymbolLike, SymbolLike], Iterable[Tuple[SymbolLike, SymbolLike]]] = (),
    promoted_outputs: Optional[Iterable[SymbolLike]] = None,
    name_promotions: Optional[Mapping[str, str]] = None,
    name: Optional[str] = None,
) -> IOSystem:
    """Wire blocks together; connections run ``source output -> target input``.

    Endpoints are written ``"block.var"``. Without ``promoted_outputs`` every
    block output is promoted. Promoted outputs and open inputs lose their
    block prefix when their remaining name is unique among them;
    ``name_promotions`` renames any namespaced symbol explicitly.
    """
    by_name: Dict[str, IOBlock] = {}
    for block in blocks:
        if block.name in by_name:
            raise NameCollision(f"two blocks are named {block.name}")
        by_name[block.name] = block

    pairs = connections.items() if isinstance(connections, Mapping) else connections
    resolved = []
    driven: Dict[sc.Symbol, sc.Symbol] = {}
    for source, target in pairs:
        src = _endpoint(by_name, source, "output")
        dst = _endpoint(by_name, target, "input")
        if dst in driven:
            raise DoublyDrivenInput(
                f"{dst.qualified} is driven by both {driven[dst].qualified} and {src.qualified}"
            )
        driven[dst] = src
        resolved.append((src, dst))

    if promoted_outputs is None:
        outputs = tuple(o.prefixed(b.name) for b in blocks for o in b.outputs)
    else:
        outputs = tuple(_endpoint(by_name, o, "output") for o in promoted_outputs)

    open_inputs = [
        i.prefixed(b.name) for b in blocks for i in b.inputs if i.prefixed(b.name) not in driven
    ]
    candidates = list(outputs) + open_inputs
    counts: Dict[str, int] = {}
    for symbol in candidates:
        counts[_strip(symbol).qualified] = counts.get(_strip(symbol).qualified, 0) + 1
    renames = {s: _strip(s) for s in candidates if counts[_strip(s).qualified] == 1}

    survivors = _namespaced_symbols(blocks, driven)
    by_qualified = {s.qualified: s for s in survivors}
    for old, new in (name_promotions or {}).items():
        symbol = by_qualified.get(old)
        if symbol is None:
            raise DanglingEndpoint(f"cannot promote {old}: no such symbol")
        renames[symbol] = symbol.renamed(new)

    final: Dict[str, sc.Symbol] = {}
    for symbol in survivors:
        target = renames.get(symbol, symbol)
        other = final.setdefault(target.qualified, symbol)
        if other != symbol:
            raise NameCollision(
                f"{other.qualified} and {symbol.qualified} both map to {target.qualified}"
            )

    return IOSystem(
        name or "_".join(b.name for b in blocks),
        tuple(blocks),
        tuple(resolved),
        outputs,
        renames,
    )


def _namespaced_symbols(blocks, driven) -> List[sc.Symbol]:
    found: List[sc.Symbol] = []
    seen = set()
    for block in blocks:
        symbols = list(block.states) + list(block.inputs) + list(block.parameters)
        for eq in block.equations:
            symbols.extend(sorted(sc.free_symbols(eq.rhs), key=sc.symbol_sort_key))
        for symbol in symbols:
            if symbol.kind is sc.SymbolKind.TIME:
                continue
            namespaced = symbol.prefixed(block.name)
            if namespaced in driven or namespaced in seen:
                continue
            seen.add(namespaced)
            found.append(namespaced)
    return found


def _close(mapping: Dict[sc.Symbol, sc.Expr]) -> Dict[sc.Symbol, sc.Expr]:
    """Substitute a set of explicit equations into each other until none refers to another."""
    keys = frozenset(mapping)
    table = {sc.Var(k): v for k, v in mapping.items()}
    current = dict(mapping)
    for _ in range(SUBSTITUTION_CAP):
        pending = [s for s, rhs in current.items() if sc.free_symbols(rhs) & keys]
        if not pending:
            return current
        for symbol in pending:
            if symbol in sc.free_symbols(current[symbol]):
                raise CyclicAlgebraicDependency(
                    f"{symbol.qualified} depends on itself through explicit equations"
                )
        current = {s: sc.substitute(rhs, table) for s, rhs in current.items()}
        table = {sc.Var(k): v for k, v in current.items()}
    raise CyclicAlgebraicDependency(
        f"explicit equations did not reach a fixpoint within {SUBSTITUTION_CAP} substitutions"
    )


def _rate_symbol(state: sc.Symbol) -> sc.Symbol:
    return sc.Symbol(state.name, ("__rate__",) + state.namespace, sc.SymbolKind.STATE)


def _expand(expr: sc.Expr, algebraic: Mapping, rates: Mapping) -> sc.Expr:
    if not sc.contains_derivative(expr):
        return expr

    def inside(e: sc.Expr) -> sc.Expr:
        if isinstance(e, sc.Dt):
            return sc.dt(sc.substitute(inside(e.child), algebraic))
        if not e.children:
            return e
        return e.rebuild(tuple(inside(c) for c in e.children))

    return sc.expand_derivative(inside(expr), rates)


def connect_system(system: IOSystem) -> IOBlock:
    """Reduce an ``IOSystem`` to a single flat ``IOBlock``."""
    driven = system.connected_inputs

    def final(symbol: sc.Symbol) -> sc.Symbol:
        symbol = driven.get(symbol, symbol)
        return system.renames.get(symbol, symbol)

    equations: List[Equation] = []
    defaults: Dict[sc.Symbol, float] = {}
    for block in system.blocks:
        mapping = {}
        for symbol in _block_symbols(block):
            mapping[sc.Var(symbol)] = sc.Var(final(symbol.prefixed(block.name)))
        equations.extend(eq.renamed(mapping) for eq in block.equations)
        for symbol, value in block.defaults.items():
            defaults[final(symbol.prefixed(block.name))] = value

    outputs = set(system.promoted_outputs)
    explicit_all = {eq.state: eq.rhs for eq in equations if eq.kind is EquationKind.EXPLICIT}
    closed = _close(explicit_all)
    inline = _close({s: rhs for s, rhs in explicit_all.items() if s not in outputs})
    inline_table = {sc.Var(s): rhs for s, rhs in inline.items()}
    closed_table = {sc.Var(s): rhs for s, rhs in closed.items()}

    kept = [
        eq.with_rhs(sc.substitute(eq.rhs, inline_table))
        for eq in equations
        if not (eq.kind is EquationKind.EXPLICIT and eq.state in inline)
    ]

    differential_states = [eq.state for eq in kept if eq.kind is EquationKind.DIFFERENTIAL]
    rates = {s: sc.Var(_rate_symbol(s)) for s in differential_states}
    placeholders = frozenset(_rate_symbol(s) for s in differential_states)
    kept = [eq.with_rhs(_expand(eq.rhs, closed_table, rates)) for eq in kept]
    if any(sc.free_symbols(eq.rhs) & placeholders for eq in kept):
        solved = _solve_rates(kept, differential_states)
        table = {sc.Var(_rate_symbol(s)): rhs for s, rhs in solved.items()}
        kept = [
            eq.with_rhs(solved[eq.state])
            if eq.kind is EquationKind.DIFFERENTIAL
            else eq.with_rhs(sc.substitute(eq.rhs, table))
            for eq in kept
        ]

    flat = IOBlock(
        system.name,
        tuple(kept),
        system.open_inputs,
        system.promoted_outputs,
        {s: v for s, v in defaults.items() if s.kind is sc.SymbolKind.PARAMETER},
    )
    logger.debug(
        f"Reduced {system.name}: {len(equations)} equations -> {len(kept)} "
        f"({len(differential_states)} differential, {len(flat.inputs)} open inputs)"
    )
    return flat


def _block_symbols(block: IOBlock) -> List[sc.Symbol]:
    symbols = set(block.states) | set(block.inputs) | set(block.defaults)
    for eq in block.equations:
        symbols |= sc.free_symbols(eq.rhs)
    return [s for s in symbols if s.kind is not sc.SymbolKind.TIME]


def _solve_rates(equations: Sequence[Equation], states: Sequence[sc.Symbol]) -> Dict[sc.Symbol, sc.Expr]:
    """Eliminate derivative placeholders from the differential equations.

    Each equation ``d_s = f(.., d_s, ..)`` that is linear in ``d_s`` is solved
    as ``d_s = a / (1 - b)``; solved rates are substituted into the others.
    """
    placeholders = {_rate_symbol(s): s for s in states}
    rhs = {eq.state: eq.rhs for eq in equations if eq.kind is EquationKind.DIFFERENTIAL}
    solved: Dict[sc.Symbol, sc.Expr] = {}
    for state in states:
        rate = _rate_symbol(state)
        f = sc.substitute(rhs[state], {sc.Var(_rate_symbol(s)): e for s, e in solved.items()})
        if rate in sc.free_symbols(f):
            slope = sc.differentiate(f, rate)
            if rate in sc.free_symbols(slope):
                raise UnresolvableDerivative(
                    f"derivative of {state.qualified} appears nonlinearly in its own equation"
                )
            denominator = sc.sub(1.0, slope)
            if isinstance(denominator, sc.Const) and denominator.value == 0.0:
                raise UnresolvableDerivative(
                    f"derivative of {state.qualified} cancels out of its own equation"
                )
            f = sc.div(sc.substitute(f, {sc.Var(rate): sc.ZERO}), denominator)
        table = {sc.Var(rate): f}
        solved = {s: sc.substitute(e, table) for s, e in solved.items()}
        solved[state] = f
    for state, f in solved.items():
        if sc.free_symbols(f) & placeholders.keys():
            raise UnresolvableDerivative(f"derivative of {state.qualified} could not be resolved")
    return solved


# compilation

_CONST, _LOAD_X, _LOAD_I, _LOAD_P, _LOAD_T, _UNBOUND = range(6)
_ADD, _MUL, _POW, _NEG, _CALL = range(6, 11)


class _Tape:
    """Straight-line program over shared subexpressions."""

    def __init__(self, roots: Sequence[sc.Expr], sources: Mapping[sc.Symbol, Tuple[int, int]]):
        self.instructions: List[Tuple[int, object]] = []
        slots: Dict[sc.Expr, int] = {}

        def emit(e: sc.Expr) -> int:
            slot = slots.get(e)
            if slot is not None:
                return slot
            if isinstance(e, sc.Const):
                instruction = (_CONST, e.value)
            elif isinstance(e, sc.Var):
                if e.symbol.kind is sc.SymbolKind.TIME:
                    instruction = (_LOAD_T, None)
                elif e.symbol in sources:
                    instruction = sources[e.symbol]
                else:
                    instruction = (_UNBOUND, e.symbol.qualified)
            elif isinstance(e, sc.Add):
                instruction = (_ADD, tuple(emit(c) for c in e.terms))
            elif isinstance(e, sc.Mul):
                instruction = (_MUL, tuple(emit(c) for c in e.factors))
            elif isinstance(e, sc.Pow):
                instruction = (_POW, (emit(e.base), emit(e.exponent)))
            elif isinstance(e, sc.Neg):
                instruction = (_NEG, emit(e.child))
            elif isinstance(e, sc.Call):
                instruction = (_CALL, (dual.FUNCTIONS[e.function], emit(e.child)))
            else:
                raise UnresolvableDerivative(f"cannot compile {sc.to_prefix(e)}")
            self.instructions.append(instruction)
            slots[e] = len(self.instructions) - 1
            return slots[e]

        self.outputs = [emit(r) for r in roots]

    def run(self, x, i, p, t) -> list:
        regs = []
        push = regs.append
        for op, arg in self.instructions:
            if op == _LOAD_X:
                push(x[arg])
            elif op == _LOAD_P:
                push(p[arg])
            elif op == _LOAD_I:
                push(i[arg])
            elif op == _CONST:
                push(arg)
            elif op == _ADD:
                acc = regs[arg[0]]
                for k in arg[1:]:
                    acc = acc + regs[k]
                push(acc)
            elif op == _MUL:
                acc = regs[arg[0]]
                for k in arg[1:]:
                    acc = acc * regs[k]
                push(acc)
            elif op == _NEG:
                push(-regs[arg])
            elif op == _POW:
                push(sc.scalar_pow(regs[arg[0]], regs[arg[1]]))
            elif op == _CALL:
                push(arg[0](regs[arg[1]]))
            elif op == _LOAD_T:
                push(t)
            else:
                raise UnboundSymbol(f"no value bound for {arg}")
        return [regs[k] for k in self.outputs]


def _scalars(values) -> list:
    if values is None:
        return []
    if isinstance(values, np.ndarray) and values.dtype != object:
        return values.tolist()
    return [v if isinstance(v, dual.Dual) else float(v) for v in values]


def _order(given, default, what: str) -> Tuple[sc.Symbol, ...]:
    if given is None:
        return tuple(default)
    lookup = {s.qualified: s for s in default}
    result = []
    for item in given:
        key = item.qualified if isinstance(item, sc.Symbol) else item
        if key not in lookup:
            raise InvalidEquation(f"{key} is not a {what} of the block")
        result.append(lookup[key])
    if len(set(result)) != len(result) or (what == "state" and len(result) != len(default)):
        raise InvalidEquation(f"{what} order must list each {what} exactly once")
    return tuple(result)


class _Layout:
    def _index(self, order, name: SymbolLike, what: str) -> int:
        key = name.qualified if isinstance(name, sc.Symbol) else name
        for k, symbol in enumerate(order):
            if symbol.qualified == key:
                return k
        raise KeyError(f"{key} is not a {what} of {self.name}")

    def input_index(self, name: SymbolLike) -> int:
        return self._index(self.input_order, name, "input")

    def param_index(self, name: SymbolLike) -> int:
        return self._index(self.param_order, name, "parameter")

    def parameter_vector(self, overrides: Optional[Mapping[str, float]] = None) -> np.ndarray:
        """Defaults overlaid with ``overrides`` (qualified name -> value)."""
        overrides = dict(overrides or {})
        values = []
        for symbol in self.param_order:
            if symbol.qualified in overrides:
                values.append(float(overrides.pop(symbol.qualified)))
            elif symbol in self.defaults:
                values.append(self.defaults[symbol])
            else:
                raise InvalidParameter(f"no value for parameter {symbol.qualified} of {self.name}")
        if overrides:
            raise InvalidParameter(f"unknown parameters for {self.name}: {sorted(overrides)}")
        return np.array(values, dtype=float)


class CompiledBlock(_Layout):
    """Mass-matrix evaluator of a flat block.

    Rows follow ``state_order``: differential rows hold ``dx/dt``, explicit
    output rows the residual ``rhs - x`` and implicit rows ``rhs``.
    """

    def __init__(self, block: IOBlock, state_order, input_order, param_order):
        self.name = block.name
        self.block = block
        self.state_order = state_order
        self.input_order = input_order
        self.param_order = param_order
        self.defaults = dict(block.defaults)
        self.outputs = block.outputs
        rows = []
        mass = []
        for state in state_order:
            eq = block.equation_for(state)
            if eq.kind is EquationKind.DIFFERENTIAL:
                rows.append(eq.rhs)
                mass.append(1.0)
            elif eq.kind is EquationKind.EXPLICIT:
                rows.append(sc.sub(eq.rhs, state))
                mass.append(0.0)
            else:
                rows.append(eq.rhs)
                mass.append(0.0)
        self.mass = np.array(mass)
        sources = {s: (_LOAD_X, k) for k, s in enumerate(state_order)}
        sources.update({s: (_LOAD_I, k) for k, s in enumerate(input_order)})
        sources.update({s: (_LOAD_P, k) for k, s in enumerate(param_order)})
        self._tape = _Tape(rows, sources)

    @property
    def dimension(self) -> int:
        return len(self.state_order)

    @property
    def state_names(self) -> List[str]:
        return [s.qualified for s in self.state_order]

    def state_index(self, name: SymbolLike) -> int:
        return self._index(self.state_order, name, "state")

    def rhs(self, x, i, p, t: float = 0.0) -> np.ndarray:
        try:
            values = self._tape.run(_scalars(x), _scalars(i), _scalars(p), t)
        except (OverflowError, ZeroDivisionError) as exc:
            raise DomainError(f"{self.name}: {exc}") from exc
        return dual.as_state_array(values)

    def __repr__(self):
        return f"CompiledBlock({self.name!r}, states={self.state_names})"


def compile(
    block: IOBlock,
    state_order: Optional[Sequence[SymbolLike]] = None,
    input_order: Optional[Sequence[SymbolLike]] = None,
    param_order: Optional[Sequence[SymbolLike]] = None,
) -> CompiledBlock:
    if not block.is_flat():
        raise UnresolvableDerivative(
            f"block {block.name} still contains time derivatives; reduce it with connect_system"
        )
    return CompiledBlock(
        block,
        _order(state_order, block.states, "state"),
        _order(input_order, block.inputs, "input"),
        _order(param_order, block.parameters, "parameter"),
    )


class CompiledMap(_Layout):
    """Evaluator of a stateless block: outputs as functions of inputs and parameters."""

    def __init__(self, block: IOBlock, output_order, input_order, param_order, expressions):
        self.name = block.name
        self.block = block
        self.output_order = output_order
        self.input_order = input_order
        self.param_order = param_order
        self.defaults = dict(block.defaults)
        sources = {s: (_LOAD_I, k) for k, s in enumerate(input_order)}
        sources.update({s: (_LOAD_P, k) for k, s in enumerate(param_order)})
        self._tape = _Tape(expressions, sources)

    def output_index(self, name: SymbolLike) -> int:
        return self._index(self.output_order, name, "output")

    def evaluate(self, i, p, t: float = 0.0) -> list:
        return self._tape.run((), _scalars(i), _scalars(p), t)


def compile_map(
    block: IOBlock,
    output_order: Optional[Sequence[SymbolLike]] = None,
    input_order: Optional[Sequence[SymbolLike]] = None,
    param_order: Optional[Sequence[SymbolLike]] = None,
) -> CompiledMap:
    if any(eq.kind is not EquationKind.EXPLICIT for eq in block.equations):
        raise InvalidEquation(f"block {block.name} is not a stateless explicit map")
    if not block.is_flat():
        raise UnresolvableDerivative(f"block {block.name} contains time derivatives")
    closed = _close({eq.state: eq.rhs for eq in block.equations})
    outputs = _order(output_order, block.outputs, "output")
    return CompiledMap(
        block,
        outputs,
        _order(input_order, block.inputs, "input"),
        _order(param_order, block.parameters, "parameter"),
        [closed[s] for s in outputs],
    )


# text format


def block_to_dict(block: IOBlock) -> dict:
    return {
        "name": block.name,
        "inputs": [s.qualified for s in block.inputs],
        "outputs": [s.qualified for s in block.outputs],
        "states": [s.qualified for s in block.states],
        "parameters": {s.qualified: block.defaults.get(s) for s in block.parameters},
        "equations": [
            {"kind": eq.kind.value, "state": eq.state.qualified, "rhs": sc.to_prefix(eq.rhs)}
            for eq in block.equations
        ],
    }


def dump_block(block: IOBlock) -> str:
    return yaml.safe_dump(block_to_dict(block), allow_unicode=True, sort_keys=False)


def block_from_dict(data: Mapping) -> IOBlock:
    try:
        name = data["name"]
        inputs = [sc.Symbol.input(n) for n in data.get("inputs") or []]
        states = [sc.Symbol.state(n) for n in data.get("states") or []]
        parameters = data.get("parameters") or {}
        equations_data = data["equations"]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed block definition: missing {exc}") from exc
    table = {s.qualified: s for s in inputs + states}
    table.update({n: sc.Symbol.parameter(n) for n in parameters})
    equations = []
    for entry in equations_data:
        kind = entry.get("kind")
        try:
            kind = EquationKind(kind)
        except ValueError:
            raise ParseError(f"unknown equation kind {kind!r}") from None
        rhs = sc.parse_prefix(str(entry["rhs"]), table)
        state = entry.get("state")
        equations.append(Equation(kind, rhs, None if state is None else sc.Symbol.state(state)))
    defaults = {sc.Symbol.parameter(n): v for n, v in parameters.items() if v is not None}
    return make_block(
        name,
        equations,
        inputs,
        [sc.Symbol.state(n) for n in data.get("outputs") or []],
        defaults,
    )


def parse_block(text: str) -> IOBlock:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"invalid block YAML: {exc}") from exc
    if not isinstance(data, Mapping):
        raise ParseError("block definition must be a mapping")
    return block_from_dict(data)


def load_block(path: Union[str, Path]) -> IOBlock:
    return parse_block(Path(path).read_text(encoding="utf-8"))


__all__ = [
    "EquationKind",
    "Equation",
    "IOBlock",
    "IOSystem",
    "CompiledBlock",
    "CompiledMap",
    "differential",
    "explicit",
    "implicit",
    "make_block",
    "connect",
    "connect_system",
    "compile",
    "compile_map",
    "dump_block",
    "parse_block",
    "load_block",
    "block_to_dict",
    "block_from_dict",
]
