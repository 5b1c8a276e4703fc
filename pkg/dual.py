"""
Dual numbers for forward-mode automatic differentiation.

A ``Dual`` carries a primal value and a tangent vector, so one evaluation
propagates derivatives along several directions at once. The elementary
functions below accept plain floats and duals alike; the expression evaluator
and the integrators never need to know which one they are handling.
"""

import math
from typing import Iterable, Sequence, Tuple, Union

import numpy as np

from errors import DomainError


class Dual:
    """Scalar ``value + tangent·ε`` with ``ε² = 0``."""

    __slots__ = ("value", "tangent")

    # keep numpy from broadcasting a Dual into an array operand
    __array_ufunc__ = None

    def __init__(self, value: float, tangent):
        self.value = float(value)
        self.tangent = np.asarray(tangent, dtype=float)

    def __repr__(self):
        return f"Dual({self.value!r}, {self.tangent.tolist()!r})"

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value + other.value, self.tangent + other.tangent)
        return Dual(self.value + other, self.tangent)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value - other.value, self.tangent - other.tangent)
        return Dual(self.value - other, self.tangent)

    def __rsub__(self, other):
        return Dual(other - self.value, -self.tangent)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(
                self.value * other.value,
                self.value * other.tangent + other.value * self.tangent,
            )
        return Dual(self.value * other, self.tangent * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            if other.value == 0.0:
                raise DomainError("division by zero")
            return Dual(
                self.value / other.value,
                (self.tangent * other.value - self.value * other.tangent)
                / (other.value * other.value),
            )
        if other == 0:
            raise DomainError("division by zero")
        return Dual(self.value / other, self.tangent / other)

    def __rtruediv__(self, other):
        if self.value == 0.0:
            raise DomainError("division by zero")
        return Dual(other / self.value, -other * self.tangent / (self.value * self.value))

    def __neg__(self):
        return Dual(-self.value, -self.tangent)

    def __pos__(self):
        return self

    def __abs__(self):
        return fabs(self)

    def __pow__(self, exponent):
        if isinstance(exponent, Dual):
            return exp(exponent * log(self))
        if exponent == 0:
            return Dual(1.0, np.zeros_like(self.tangent))
        if self.value == 0.0 and exponent < 1:
            raise DomainError(f"0 raised to {exponent}")
        if self.value < 0.0 and not float(exponent).is_integer():
            raise DomainError(f"negative base {self.value} raised to {exponent}")
        return Dual(
            self.value**exponent,
            exponent * self.value ** (exponent - 1) * self.tangent,
        )

    def __rpow__(self, base):
        if base <= 0:
            raise DomainError(f"non-positive base {base} raised to a dual exponent")
        return exp(self * math.log(base))

    def __lt__(self, other):
        return self.value < primal(other)

    def __le__(self, other):
        return self.value <= primal(other)

    def __gt__(self, other):
        return self.value > primal(other)

    def __ge__(self, other):
        return self.value >= primal(other)

    def __float__(self):
        return self.value


Scalar = Union[float, Dual]


def primal(x) -> float:
    return x.value if isinstance(x, Dual) else float(x)


def sin(x: Scalar) -> Scalar:
    if isinstance(x, Dual):
        return Dual(math.sin(x.value), math.cos(x.value) * x.tangent)
    return math.sin(x)


def cos(x: Scalar) -> Scalar:
    if isinstance(x, Dual):
        return Dual(math.cos(x.value), -math.sin(x.value) * x.tangent)
    return math.cos(x)


def exp(x: Scalar) -> Scalar:
    if isinstance(x, Dual):
        value = math.exp(x.value)
        return Dual(value, value * x.tangent)
    return math.exp(x)


def log(x: Scalar) -> Scalar:
    if primal(x) <= 0.0:
        raise DomainError(f"log of non-positive value {primal(x)}")
    if isinstance(x, Dual):
        return Dual(math.log(x.value), x.tangent / x.value)
    return math.log(x)


def sqrt(x: Scalar) -> Scalar:
    if primal(x) < 0.0:
        raise DomainError(f"sqrt of negative value {primal(x)}")
    if isinstance(x, Dual):
        value = math.sqrt(x.value)
        if value == 0.0:
            raise DomainError("derivative of sqrt at 0")
        return Dual(value, x.tangent / (2.0 * value))
    return math.sqrt(x)


def sign(x: Scalar) -> Scalar:
    if isinstance(x, Dual):
        return Dual(float(np.sign(x.value)), np.zeros_like(x.tangent))
    return float(np.sign(x))


def fabs(x: Scalar) -> Scalar:
    # derivative of |x| at 0 is defined as 0
    if isinstance(x, Dual):
        return Dual(abs(x.value), float(np.sign(x.value)) * x.tangent)
    return abs(x)


FUNCTIONS = {
    "sin": sin,
    "cos": cos,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "abs": fabs,
    "sign": sign,
}


# array helpers


def seed(values: Sequence[float]) -> np.ndarray:
    """Lift values into duals whose tangents are the unit directions."""
    n = len(values)
    eye = np.eye(n)
    return np.array([Dual(v, eye[k]) for k, v in enumerate(values)], dtype=object)


def lift(values: Iterable, size: int) -> np.ndarray:
    """Lift values into duals with zero tangents of length ``size``."""
    return np.array(
        [v if isinstance(v, Dual) else Dual(v, np.zeros(size)) for v in values],
        dtype=object,
    )


def is_dual_array(values) -> bool:
    values = np.asarray(values, dtype=object) if not isinstance(values, np.ndarray) else values
    return values.dtype == object and any(isinstance(v, Dual) for v in values.flat)


def tangent_size(values) -> int:
    for v in np.asarray(values, dtype=object).flat:
        if isinstance(v, Dual):
            return v.tangent.shape[0]
    return 0


def primal_array(values) -> np.ndarray:
    values = np.asarray(values, dtype=object) if not isinstance(values, np.ndarray) else values
    if values.dtype != object:
        return values.astype(float)
    return np.array([primal(v) for v in values.flat], dtype=float).reshape(values.shape)


def split(values, size: int = None) -> Tuple[np.ndarray, np.ndarray]:
    """Separate a 1-D array into primal values and an (n, k) tangent matrix."""
    size = tangent_size(values) if size is None else size
    flat = list(np.asarray(values, dtype=object).flat)
    primals = np.array([primal(v) for v in flat], dtype=float)
    tangents = np.zeros((len(flat), size))
    for row, v in enumerate(flat):
        if isinstance(v, Dual):
            tangents[row] = v.tangent
    return primals, tangents


def join(primals: np.ndarray, tangents: np.ndarray) -> np.ndarray:
    return np.array(
        [Dual(v, tangents[row]) for row, v in enumerate(primals)], dtype=object
    )


def as_state_array(values) -> np.ndarray:
    """Float array for plain values, object array when any entry is a dual."""
    values = list(values)
    if any(isinstance(v, Dual) for v in values):
        return np.array(values, dtype=object)
    return np.array(values, dtype=float)
