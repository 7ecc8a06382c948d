from decimal import Decimal
from fractions import Fraction

import gmpy2
import pytest
from hypothesis import given, strategies as st

from basepar.precision import ExprError, PrecisionLevel, eval_expr, expr_symbols, norm_inf


def test_parse_levels():
    assert PrecisionLevel.parse("native").is_native
    assert PrecisionLevel.parse("dp").is_native
    assert PrecisionLevel.parse("30") == PrecisionLevel(30)
    assert PrecisionLevel(30).bits >= 100
    with pytest.raises(ValueError):
        PrecisionLevel(10)


def test_tolerance_scale():
    assert float(PrecisionLevel(30).tol(8)) == pytest.approx(1e-22)
    assert PrecisionLevel.native().effective_digits == 16


def test_decimal_literals_are_not_routed_through_binary():
    lvl = PrecisionLevel(40)
    x = eval_expr("0.1301", {}, lvl)
    with lvl.context():
        exact = gmpy2.mpfr(1301) / 10000
        assert abs(x - exact) < gmpy2.mpfr("1e-45")
    # the double nearest 0.1301 differs from it around 1e-18
    with lvl.context():
        assert abs(gmpy2.mpfr(0.1301) - exact) > gmpy2.mpfr("1e-20")


@given(st.decimals(min_value=-1000, max_value=1000, allow_nan=False, places=6))
def test_format_round_trip(d):
    lvl = PrecisionLevel(30)
    x = lvl.scalar(str(d))
    back = Decimal(lvl.fmt(x))
    assert abs(back - d) <= Decimal("1e-25") * max(1, abs(d))


def test_native_format_is_repr():
    assert PrecisionLevel.native().fmt(0.1) == "0.1"


def test_geometry_symbols_resolve_recursively():
    env = {"a": "0.5", "b": "2*a + 1"}
    assert float(eval_expr("b**2 - 1/a", env, PrecisionLevel(30))) == pytest.approx(2.0)
    assert expr_symbols("sqrt(D12) + cos(P1)*L7") == {"D12", "P1", "L7"}


@pytest.mark.parametrize("bad", ["a**b", "foo(1)", "x", "1/0", "a if b else c"])
def test_expression_errors(bad):
    with pytest.raises(ExprError):
        eval_expr(bad, {"a": "1", "b": "2"}, PrecisionLevel.native())


def test_scalar_from_fraction():
    lvl = PrecisionLevel(30)
    assert abs(float(lvl.scalar(Fraction(1, 3))) - 1 / 3) < 1e-16
    assert norm_inf([]) == 0
