import mpmath
import pytest

from poemlab.entropy import FieldSpec, ThresholdSpec


@pytest.fixture
def f8():
    return FieldSpec(8)


@pytest.fixture
def t_20_5():
    return ThresholdSpec(20, 5)


def oracle_n(h: int, l: int):
    """High-precision l - log2(h), with h in {0, 1} mapped to l."""
    with mpmath.workprec(300):
        if h <= 1:
            return mpmath.mpf(l)
        return l - mpmath.log(h, 2)
