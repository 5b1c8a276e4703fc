import math

import numpy as np
import pytest

import dual
from dual import Dual
from errors import DomainError


def test_arithmetic_tangents():
    x = Dual(2.0, [1.0, 0.0])
    y = Dual(3.0, [0.0, 1.0])
    assert (x * y).tangent.tolist() == [3.0, 2.0]
    assert (x / y).value == pytest.approx(2.0 / 3.0)
    assert (x / y).tangent.tolist() == pytest.approx([1 / 3, -2 / 9])
    assert (1.0 - x).tangent.tolist() == [-1.0, 0.0]
    assert (x**3).tangent.tolist() == [12.0, 0.0]


def test_mixed_float_and_dual_arrays():
    x = np.array([Dual(1.0, [1.0]), Dual(2.0, [0.0])], dtype=object)
    y = 2.0 * x + np.array([0.5, 0.5])
    assert [v.value for v in y] == [2.5, 4.5]
    assert [v.tangent[0] for v in y] == [2.0, 0.0]


def test_elementary_functions():
    x = Dual(0.3, [1.0])
    assert dual.sin(x).tangent[0] == pytest.approx(math.cos(0.3))
    assert dual.exp(x).tangent[0] == pytest.approx(math.exp(0.3))
    assert dual.log(x).tangent[0] == pytest.approx(1 / 0.3)
    assert dual.sqrt(x).tangent[0] == pytest.approx(0.5 / math.sqrt(0.3))
    assert dual.fabs(Dual(-2.0, [1.0])).tangent[0] == -1.0
    assert dual.fabs(Dual(0.0, [1.0])).tangent[0] == 0.0


@pytest.mark.parametrize(
    "fn",
    [
        lambda: dual.log(Dual(0.0, [1.0])),
        lambda: dual.sqrt(Dual(-1.0, [1.0])),
        lambda: Dual(1.0, [1.0]) / 0.0,
        lambda: 1.0 / Dual(0.0, [1.0]),
        lambda: Dual(-2.0, [1.0]) ** 0.5,
    ],
)
def test_domain_errors(fn):
    with pytest.raises(DomainError):
        fn()


def test_seed_split_join():
    seeded = dual.seed([1.0, 2.0, 3.0])
    primals, tangents = dual.split(seeded)
    assert primals.tolist() == [1.0, 2.0, 3.0]
    assert tangents.tolist() == np.eye(3).tolist()
    assert dual.tangent_size(seeded) == 3
    joined = dual.join(primals, tangents)
    assert dual.is_dual_array(joined)
    assert not dual.is_dual_array(np.array([1.0, 2.0]))


def test_as_state_array_keeps_floats_plain():
    assert dual.as_state_array([1.0, 2.0]).dtype == float
    assert dual.as_state_array([1.0, Dual(2.0, [1.0])]).dtype == object
