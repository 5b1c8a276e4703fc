"""
Immutable symbolic expressions.

Expressions are small frozen trees over symbols, constants, arithmetic, a fixed
set of elementary functions and a time-derivative operator ``D``. They are
value-compared (structural equality, cached hashes) and built through smart
constructors that apply a deliberately conservative simplification: constant
folding, 0/1 identities and flattening of nested sums and products. Division
is ``x * y^-1`` and subtraction is ``x + neg(y)``.

Textual form is prefix notation, e.g. ``(* (^ M -1.0) (+ P_m (neg P_e)))``,
with namespaced symbols written as ``swing.ω``.
"""

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, FrozenSet, Iterable, Mapping, Optional, Tuple, Union

import dual
from errors import DomainError, ParseError, UnboundSymbol, UnresolvableDerivative

PUBLIC_FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "abs")
# ``sign`` only appears as the derivative of ``abs``
FUNCTIONS = PUBLIC_FUNCTIONS + ("sign",)


class SymbolKind(Enum):
    STATE = "state"
    INPUT = "input"
    PARAMETER = "parameter"
    TIME = "time"


class ScalarKind(Enum):
    PLAIN = "plain"
    DUAL = "dual"


@dataclass(frozen=True)
class Symbol:
    name: str
    namespace: Tuple[str, ...] = ()
    kind: SymbolKind = SymbolKind.STATE

    @classmethod
    def state(cls, qualified: str) -> "Symbol":
        return cls.from_qualified(qualified, SymbolKind.STATE)

    @classmethod
    def input(cls, qualified: str) -> "Symbol":
        return cls.from_qualified(qualified, SymbolKind.INPUT)

    @classmethod
    def parameter(cls, qualified: str) -> "Symbol":
        return cls.from_qualified(qualified, SymbolKind.PARAMETER)

    @classmethod
    def from_qualified(cls, qualified: str, kind: SymbolKind) -> "Symbol":
        *namespace, name = qualified.split(".")
        return cls(name, tuple(namespace), kind)

    @property
    def qualified(self) -> str:
        return ".".join(self.namespace + (self.name,))

    def prefixed(self, prefix: str) -> "Symbol":
        if self.kind is SymbolKind.TIME:
            return self
        return Symbol(self.name, (prefix,) + self.namespace, self.kind)

    def renamed(self, qualified: str) -> "Symbol":
        return Symbol.from_qualified(qualified, self.kind)

    def __str__(self):
        return self.qualified

    # arithmetic on symbols builds expressions
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __pow__(self, other):
        return power(self, other)

    def __neg__(self):
        return neg(self)


TIME = Symbol("t", (), SymbolKind.TIME)


def symbol_sort_key(symbol: Symbol):
    return (symbol.qualified, symbol.kind.value)


class Expr:
    """Base class of expression nodes; structural equality with cached hash."""

    def _key(self) -> tuple:
        raise NotImplementedError

    @property
    def children(self) -> Tuple["Expr", ...]:
        return ()

    def rebuild(self, children: Tuple["Expr", ...]) -> "Expr":
        return self

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Expr) or type(self) is not type(other):
            return False
        return self._hash == other._hash and self._key() == other._key()

    def __ne__(self, other):
        return not self.__eq__(other)

    def __hash__(self):
        return self._hash

    def _set_hash(self):
        object.__setattr__(self, "_hash", hash(self._key()))

    def __repr__(self):
        return to_prefix(self)

    __str__ = __repr__

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __pow__(self, other):
        return power(self, other)

    def __rpow__(self, other):
        return power(other, self)

    def __neg__(self):
        return neg(self)


@dataclass(frozen=True, eq=False, repr=False)
class Const(Expr):
    value: float

    def __post_init__(self):
        self._set_hash()

    def _key(self):
        return ("const", self.value)


@dataclass(frozen=True, eq=False, repr=False)
class Var(Expr):
    symbol: Symbol

    def __post_init__(self):
        self._set_hash()

    def _key(self):
        return ("var", self.symbol)


@dataclass(frozen=True, eq=False, repr=False)
class Add(Expr):
    terms: Tuple[Expr, ...]

    def __post_init__(self):
        self._set_hash()

    def _key(self):
        return ("+",) + self.terms

    @property
    def children(self):
        return self.terms

    def rebuild(self, children):
        return add(*children)


@dataclass(frozen=True, eq=False, repr=False)
class Mul(Expr):
    factors: Tuple[Expr, ...]

    def __post_init__(self):
        self._set_hash()

    def _key(self):
        return ("*",) + self.factors

    @property
    def children(self):
        return self.factors

    def rebuild(self, children):
        return mul(*children)


@dataclass(frozen=True, eq=False, repr=False)
class Pow(Expr):
    base: Expr
    exponent: Expr

    def __post_init__(self):
        self._set_hash()

    def _key(self):
        return ("^", self.base, self.exponent)

    @property
    def children(self):
        return (self.base, self.exponent)

    def rebuild(self, children):
        return power(*children)


@dataclass(frozen=True, eq=False, repr=False)
class Neg(Expr):
    child: Expr

    def __post_init__(self):
        self._set_hash()

    def _key(self):
        return ("neg", self.child)

    @property
    def children(self):
        return (self.child,)

    def rebuild(self, children):
        return neg(children[0])


@dataclass(frozen=True, eq=False, repr=False)
class Call(Expr):
    function: str
    child: Expr

    def __post_init__(self):
        if self.function not in FUNCTIONS:
            raise ValueError(f"unsupported function {self.function!r}")
        self._set_hash()

    def _key(self):
        return ("call", self.function, self.child)

    @property
    def children(self):
        return (self.child,)

    def rebuild(self, children):
        return call(self.function, children[0])


@dataclass(frozen=True, eq=False, repr=False)
class Dt(Expr):
    child: Expr

    def __post_init__(self):
        self._set_hash()

    def _key(self):
        return ("D", self.child)

    @property
    def children(self):
        return (self.child,)

    def rebuild(self, children):
        return dt(children[0])


ZERO = Const(0.0)
ONE = Const(1.0)

ExprLike = Union[Expr, Symbol, float, int]


# constructors


def as_expr(x: ExprLike) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, Symbol):
        return Var(x)
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        return Const(float(x))
    raise TypeError(f"cannot convert {type(x).__name__} to an expression")


def const(value: float) -> Const:
    return Const(float(value))


def var(symbol: Symbol) -> Var:
    return Var(symbol)


def add(*terms: ExprLike) -> Expr:
    flat = []
    total = 0.0
    for term in map(as_expr, terms):
        for item in term.terms if isinstance(term, Add) else (term,):
            if isinstance(item, Const):
                total += item.value
            else:
                flat.append(item)
    if total != 0.0:
        flat.insert(0, Const(total))
    if not flat:
        return ZERO
    if len(flat) == 1:
        return flat[0]
    return Add(tuple(flat))


def neg(x: ExprLike) -> Expr:
    x = as_expr(x)
    if isinstance(x, Const):
        return Const(-x.value)
    if isinstance(x, Neg):
        return x.child
    return Neg(x)


def sub(a: ExprLike, b: ExprLike) -> Expr:
    return add(a, neg(b))


def mul(*factors: ExprLike) -> Expr:
    flat = []
    coefficient = 1.0
    pending = list(map(as_expr, factors))
    while pending:
        item = pending.pop(0)
        if isinstance(item, Mul):
            pending[0:0] = list(item.factors)
        elif isinstance(item, Neg):
            coefficient = -coefficient
            pending.insert(0, item.child)
        elif isinstance(item, Const):
            coefficient *= item.value
        else:
            flat.append(item)
    if coefficient == 0.0:
        return ZERO
    if not flat:
        return Const(coefficient)
    body = flat[0] if len(flat) == 1 else Mul(tuple(flat))
    if coefficient == 1.0:
        return body
    if coefficient == -1.0:
        return Neg(body)
    return Mul((Const(coefficient),) + (body.factors if isinstance(body, Mul) else (body,)))


def power(base: ExprLike, exponent: ExprLike) -> Expr:
    base, exponent = as_expr(base), as_expr(exponent)
    if isinstance(exponent, Const):
        if exponent.value == 0.0:
            return ONE
        if exponent.value == 1.0:
            return base
        if isinstance(base, Const):
            try:
                return Const(_plain_pow(base.value, exponent.value))
            except DomainError:
                pass
    if isinstance(base, Const) and base.value == 1.0:
        return ONE
    return Pow(base, exponent)


def div(a: ExprLike, b: ExprLike) -> Expr:
    return mul(a, power(b, -1.0))


def call(function: str, x: ExprLike) -> Expr:
    x = as_expr(x)
    if isinstance(x, Const):
        try:
            return Const(dual.FUNCTIONS[function](x.value))
        except (DomainError, KeyError):
            pass
    return Call(function, x)


def dt(x: ExprLike) -> Expr:
    x = as_expr(x)
    if isinstance(x, Const):
        return ZERO
    return Dt(x)


def sin(x):
    return call("sin", x)


def cos(x):
    return call("cos", x)


def exp(x):
    return call("exp", x)


def log(x):
    return call("log", x)


def sqrt(x):
    return call("sqrt", x)


def fabs(x):
    return call("abs", x)


def simplify(expr: Expr) -> Expr:
    """Rebuild bottom-up through the smart constructors."""
    kids = expr.children
    if not kids:
        return expr
    return expr.rebuild(tuple(simplify(c) for c in kids))


# queries


def free_symbols(expr: ExprLike) -> FrozenSet[Symbol]:
    expr = as_expr(expr)
    cached = getattr(expr, "_free", None)
    if cached is not None:
        return cached
    if isinstance(expr, Var):
        result = frozenset((expr.symbol,))
    else:
        result = frozenset().union(*(free_symbols(c) for c in expr.children))
    object.__setattr__(expr, "_free", result)
    return result


def contains_derivative(expr: Expr) -> bool:
    if isinstance(expr, Dt):
        return True
    return any(contains_derivative(c) for c in expr.children)


# rewriting


def substitute(expr: ExprLike, mapping: Mapping[ExprLike, ExprLike]) -> Expr:
    """Replace every maximal subtree equal to a key; results are not re-scanned."""
    expr = as_expr(expr)
    table = {as_expr(k): as_expr(v) for k, v in mapping.items()}
    if not table:
        return expr
    symbols = frozenset(k.symbol for k in table if isinstance(k, Var))
    only_symbols = len(symbols) == len(table)
    cache: Dict[Expr, Expr] = {}

    def walk(e: Expr) -> Expr:
        hit = table.get(e)
        if hit is not None:
            return hit
        kids = e.children
        if not kids:
            return e
        if only_symbols and not (free_symbols(e) & symbols):
            return e
        done = cache.get(e)
        if done is not None:
            return done
        new = tuple(walk(c) for c in kids)
        result = e if all(a is b for a, b in zip(new, kids)) else e.rebuild(new)
        cache[e] = result
        return result

    return walk(expr)


def differentiate(expr: ExprLike, symbol: Symbol) -> Expr:
    """Symbolic partial derivative of ``expr`` with respect to ``symbol``."""
    expr = as_expr(expr)
    if symbol not in free_symbols(expr):
        return ZERO
    if isinstance(expr, Var):
        return ONE
    if isinstance(expr, Add):
        return add(*(differentiate(t, symbol) for t in expr.terms))
    if isinstance(expr, Mul):
        factors = expr.factors
        return add(
            *(
                mul(*factors[:k], differentiate(f, symbol), *factors[k + 1 :])
                for k, f in enumerate(factors)
                if symbol in free_symbols(f)
            )
        )
    if isinstance(expr, Neg):
        return neg(differentiate(expr.child, symbol))
    if isinstance(expr, Pow):
        base, exponent = expr.base, expr.exponent
        if symbol not in free_symbols(exponent):
            return mul(exponent, power(base, add(exponent, -1.0)), differentiate(base, symbol))
        return mul(
            expr,
            add(
                mul(differentiate(exponent, symbol), log(base)),
                mul(exponent, differentiate(base, symbol), power(base, -1.0)),
            ),
        )
    if isinstance(expr, Call):
        x = expr.child
        inner = differentiate(x, symbol)
        outer = {
            "sin": lambda: cos(x),
            "cos": lambda: neg(sin(x)),
            "exp": lambda: expr,
            "log": lambda: power(x, -1.0),
            "sqrt": lambda: power(mul(2.0, expr), -1.0),
            "abs": lambda: call("sign", x),
            "sign": lambda: ZERO,
        }[expr.function]()
        return mul(outer, inner)
    if isinstance(expr, Dt):
        raise UnresolvableDerivative(
            f"cannot differentiate through unexpanded derivative {to_prefix(expr)}"
        )
    raise TypeError(f"unknown expression node {type(expr).__name__}")


def expand_derivative(expr: ExprLike, known: Mapping[Symbol, ExprLike]) -> Expr:
    """Rewrite every ``D(u)`` by the chain rule using the known rates in ``known``.

    Rates: ``known[s]`` for known symbols, 0 for parameters, 1 for time.
    Any other symbol under ``D`` raises ``UnresolvableDerivative``.
    """
    expr = as_expr(expr)
    rates = {k if isinstance(k, Symbol) else as_expr(k).symbol: as_expr(v) for k, v in known.items()}

    def rate(symbol: Symbol) -> Expr:
        if symbol in rates:
            return rates[symbol]
        if symbol.kind is SymbolKind.PARAMETER:
            return ZERO
        if symbol.kind is SymbolKind.TIME:
            return ONE
        raise UnresolvableDerivative(f"no known derivative for {symbol.qualified}")

    def walk(e: Expr) -> Expr:
        if isinstance(e, Dt):
            inner = walk(e.child)
            return add(
                *(
                    mul(differentiate(inner, s), rate(s))
                    for s in sorted(free_symbols(inner), key=symbol_sort_key)
                )
            )
        kids = e.children
        if not kids or not contains_derivative(e):
            return e
        return e.rebuild(tuple(walk(c) for c in kids))

    return walk(expr)


# evaluation


def _plain_pow(base: float, exponent: float) -> float:
    if base == 0.0 and exponent < 0.0:
        raise DomainError("division by zero")
    if base < 0.0 and not float(exponent).is_integer():
        raise DomainError(f"negative base {base} raised to {exponent}")
    try:
        return base**exponent
    except OverflowError as exc:
        raise DomainError(str(exc)) from exc


def scalar_pow(base, exponent):
    if isinstance(base, dual.Dual) or isinstance(exponent, dual.Dual):
        return base**exponent
    return _plain_pow(base, exponent)


def evaluate(
    expr: ExprLike,
    bindings: Mapping[Union[Symbol, Expr], "dual.Scalar"],
    scalar_kind: ScalarKind = ScalarKind.PLAIN,
):
    """Numeric value of ``expr`` under ``bindings`` (floats or duals)."""
    expr = as_expr(expr)
    values = {(k if isinstance(k, Symbol) else k.symbol): v for k, v in bindings.items()}
    if scalar_kind is ScalarKind.DUAL:
        size = dual.tangent_size(list(values.values()))
        values = {
            k: v if isinstance(v, dual.Dual) else dual.Dual(v, [0.0] * size)
            for k, v in values.items()
        }
    else:
        for k, v in values.items():
            if isinstance(v, dual.Dual):
                raise TypeError(f"dual binding for {k.qualified} in plain evaluation")
            values[k] = float(v)
    cache: Dict[Expr, object] = {}

    def walk(e: Expr):
        if isinstance(e, Const):
            return e.value
        if isinstance(e, Var):
            try:
                return values[e.symbol]
            except KeyError:
                raise UnboundSymbol(f"no value bound for {e.symbol.qualified}") from None
        hit = cache.get(e)
        if hit is not None:
            return hit
        if isinstance(e, Add):
            result = walk(e.terms[0])
            for term in e.terms[1:]:
                result = result + walk(term)
        elif isinstance(e, Mul):
            result = walk(e.factors[0])
            for factor in e.factors[1:]:
                result = result * walk(factor)
        elif isinstance(e, Pow):
            result = scalar_pow(walk(e.base), walk(e.exponent))
        elif isinstance(e, Neg):
            result = -walk(e.child)
        elif isinstance(e, Call):
            result = dual.FUNCTIONS[e.function](walk(e.child))
        elif isinstance(e, Dt):
            raise UnresolvableDerivative(f"cannot evaluate unexpanded derivative {to_prefix(e)}")
        else:
            raise TypeError(f"unknown expression node {type(e).__name__}")
        cache[e] = result
        return result

    try:
        return walk(expr)
    except (OverflowError, ZeroDivisionError) as exc:
        raise DomainError(str(exc)) from exc


# serialization

_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_OPERATORS = {"+": add, "*": mul, "^": power, "neg": neg, "D": dt}


def to_prefix(expr: ExprLike) -> str:
    expr = as_expr(expr)
    if isinstance(expr, Const):
        return repr(expr.value)
    if isinstance(expr, Var):
        return expr.symbol.qualified
    if isinstance(expr, Add):
        head = "+"
    elif isinstance(expr, Mul):
        head = "*"
    elif isinstance(expr, Pow):
        head = "^"
    elif isinstance(expr, Neg):
        head = "neg"
    elif isinstance(expr, Call):
        head = expr.function
    elif isinstance(expr, Dt):
        head = "D"
    else:
        raise TypeError(f"unknown expression node {type(expr).__name__}")
    return "(" + " ".join([head] + [to_prefix(c) for c in expr.children]) + ")"


def _tokenize(text: str):
    return text.replace("(", " ( ").replace(")", " ) ").split()


def parse_prefix(
    text: str, resolve: Union[Mapping[str, Symbol], Callable[[str], Optional[Symbol]]]
) -> Expr:
    """Parse prefix notation; ``resolve`` maps qualified names to symbols."""
    lookup = resolve.get if isinstance(resolve, Mapping) else resolve
    tokens = _tokenize(text)
    position = 0

    def atom(token: str) -> Expr:
        if _NUMBER.match(token):
            return Const(float(token))
        symbol = lookup(token)
        if symbol is None:
            if token == TIME.name:
                return Var(TIME)
            raise ParseError(f"unknown symbol {token!r}")
        return Var(symbol)

    def parse() -> Expr:
        nonlocal position
        if position >= len(tokens):
            raise ParseError("unexpected end of expression")
        token = tokens[position]
        position += 1
        if token == ")":
            raise ParseError("unexpected ')'")
        if token != "(":
            return atom(token)
        if position >= len(tokens):
            raise ParseError("unexpected end of expression")
        head = tokens[position]
        position += 1
        args = []
        while position < len(tokens) and tokens[position] != ")":
            args.append(parse())
        if position >= len(tokens):
            raise ParseError("missing ')'")
        position += 1
        if head in _OPERATORS:
            builder = _OPERATORS[head]
            if head in ("neg", "D") and len(args) != 1:
                raise ParseError(f"{head} takes one argument")
            if head == "^" and len(args) != 2:
                raise ParseError("^ takes two arguments")
            return builder(*args)
        if head in FUNCTIONS:
            if len(args) != 1:
                raise ParseError(f"{head} takes one argument")
            return call(head, args[0])
        raise ParseError(f"unknown operator {head!r}")

    result = parse()
    if position != len(tokens):
        raise ParseError("trailing tokens after expression")
    return result


__all__ = [
    "Symbol",
    "SymbolKind",
    "ScalarKind",
    "TIME",
    "Expr",
    "Const",
    "Var",
    "Add",
    "Mul",
    "Pow",
    "Neg",
    "Call",
    "Dt",
    "as_expr",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "call",
    "dt",
    "sin",
    "cos",
    "exp",
    "log",
    "sqrt",
    "fabs",
    "simplify",
    "free_symbols",
    "contains_derivative",
    "substitute",
    "differentiate",
    "expand_derivative",
    "evaluate",
    "to_prefix",
    "parse_prefix",
]
