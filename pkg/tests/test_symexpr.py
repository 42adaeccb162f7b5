import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lcskit import symexpr as sx
from lcskit.forms import linear_domain
from oracle_utils import central_difference

X, Y = sx.var("x"), sx.var("y")
BOX = linear_domain("box", ["x", "y"])


def _as_func(e):
    return lambda point: sx.evaluate(e, point)


# ---------------------------------------------------------------------------
# differentiation against the frozen finite-difference oracle


def test_diff_matches_central_difference_at_cited_point():
    e = sx.sin(X) * sx.exp(Y)
    sym = sx.evaluate(sx.diff(e, "x"), {"x": 0.7, "y": 0.2})
    fd = central_difference(_as_func(e), {"x": 0.7, "y": 0.2}, "x")
    assert abs(sym - fd) < 1e-8


@pytest.mark.parametrize(
    "expr,name",
    [
        (X**3 + 2 * X * Y, "x"),
        (sx.sqrt(1 + X**2 + Y**2), "y"),
        (sx.exp(X * Y) * sx.cos(X), "x"),
        (X / (1 + Y**2), "y"),
        (sx.pow_(1 + X**2, Fraction(3, 2)), "x"),
    ],
)
def test_diff_matches_central_difference(expr, name):
    rng = np.random.default_rng(11)
    for _ in range(5):
        pt = {"x": float(rng.uniform(-1, 1)), "y": float(rng.uniform(-1, 1))}
        sym = sx.evaluate(sx.diff(expr, name), pt)
        fd = central_difference(_as_func(expr), pt, name)
        assert abs(sym - fd) < 1e-6 * (1.0 + abs(sym))


def test_diff_second_order_matches_oracle():
    e = sx.sin(X) * sx.exp(Y)
    d2 = sx.diff(sx.diff(e, "x"), "x")
    pt = {"x": 0.3, "y": -0.4}
    fd = central_difference(_as_func(sx.diff(e, "x")), pt, "x")
    assert abs(sx.evaluate(d2, pt) - fd) < 1e-6


def test_sqrt_derivative_at_zero_is_domain_error():
    d = sx.diff(sx.sqrt(X), "x")
    with pytest.raises(sx.EvaluationDomainError):
        sx.evaluate(d, {"x": 0.0})


def test_sqrt_of_negative_is_domain_error_with_point():
    with pytest.raises(sx.EvaluationDomainError) as err:
        sx.evaluate(sx.sqrt(X), {"x": -2.0})
    assert err.value.point["x"] == -2.0


def test_division_by_zero_is_domain_error():
    with pytest.raises(sx.EvaluationDomainError):
        sx.evaluate(1 / X, {"x": np.array([1.0, 0.0, 2.0])})


def test_unknown_coordinate_error():
    with pytest.raises(sx.UnknownCoordinateError):
        sx.evaluate(X + Y, {"x": 1.0})


# ---------------------------------------------------------------------------
# numerical zero testing


def test_is_zero_pythagorean_identity():
    check = sx.is_zero(sx.sin(X) ** 2 + sx.cos(X) ** 2 - 1, BOX, samples=200, tol=1e-12, seed=3)
    assert check.passed
    assert check.max_residual < 1e-12


def test_is_zero_binomial_identity():
    e = (X + Y) ** 2 - X**2 - 2 * X * Y - Y**2
    assert sx.is_zero(e, BOX, samples=100, tol=1e-12, seed=5).passed


def test_is_zero_sine_addition_identity():
    e = sx.sin(X + Y) - sx.sin(X) * sx.cos(Y) - sx.cos(X) * sx.sin(Y)
    assert sx.is_zero(e, BOX, seed=9).passed


def test_is_zero_rejects_nonzero_and_reports_worst_point():
    check = sx.is_zero(X**2, BOX, samples=500, tol=1e-9, seed=1)
    assert not check.passed
    assert 0.5 < check.max_residual <= 1.0
    assert abs(check.worst_point["x"] ** 2 - check.max_residual) < 1e-15


def test_is_zero_deterministic_given_seed():
    e = sx.sin(X) * Y
    a = sx.is_zero(e, BOX, samples=64, tol=1e-9, seed=42)
    b = sx.is_zero(e, BOX, samples=64, tol=1e-9, seed=42)
    assert a == b


def test_is_zero_accepts_iterables():
    checks = sx.is_zero([X - X, sx.ZERO], BOX, samples=10, seed=0)
    assert checks.passed and checks.max_residual == 0.0


# ---------------------------------------------------------------------------
# constructor rewrites (light, order-preserving)


def test_add_flattens_and_folds_constants():
    e = sx.add(sx.add(X, 1), sx.add(Y, 2))
    assert isinstance(e, sx.Add)
    assert e.terms[0] == sx.Const(3.0)
    assert len(e.terms) == 3


def test_mul_absorbs_zero_and_one():
    assert sx.mul(X, 0) == sx.ZERO
    assert sx.mul(X, 1) is X or sx.mul(X, 1) == X
    assert sx.mul(2, X, 3) == sx.Mul((sx.Const(6.0), X))


def test_pow_identities():
    assert sx.pow_(X, 0) == sx.ONE
    assert sx.pow_(X, 1) == X
    assert sx.pow_(sx.Const(2.0), 10) == sx.Const(1024.0)


def test_sqrt_square_merges_but_square_sqrt_does_not():
    merged = sx.pow_(sx.sqrt(X), 2)
    assert merged == X
    kept = sx.pow_(sx.pow_(X, 2), Fraction(1, 2))
    assert isinstance(kept, sx.Pow) and isinstance(kept.base, sx.Pow)
    # (x^2)^(1/2) must evaluate to |x|, not x
    assert sx.evaluate(kept, {"x": -3.0}) == pytest.approx(3.0)


def test_double_negation_cancels():
    assert sx.neg(sx.neg(X)) == X


def test_constant_call_folds():
    assert sx.sin(sx.Const(0.0)) == sx.Const(0.0)
    assert sx.exp(sx.Const(0.0)) == sx.Const(1.0)


# ---------------------------------------------------------------------------
# parser


@pytest.mark.parametrize(
    "text,point,expected",
    [
        ("2+3*4^2", {}, 50.0),
        ("-x^2", {"x": 3.0}, -9.0),
        ("x^(1/2)", {"x": 4.0}, 2.0),
        ("x^(3/2)", {"x": 4.0}, 8.0),
        ("x^-1", {"x": 4.0}, 0.25),
        ("sqrt(x)*x", {"x": 9.0}, 27.0),
        ("x/y - 1", {"x": 1.0, "y": 4.0}, -0.75),
        ("sin(pi/2)", {}, 1.0),
        ("cos(2*pi*t)", {"t": 1.0}, 1.0),
        ("exp(0)*7", {}, 7.0),
        ("1 - 2 - 3", {}, -4.0),
        ("2*-3", {}, -6.0),
    ],
)
def test_parse_evaluates(text, point, expected):
    assert sx.evaluate(sx.parse(text), point) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("bad", ["", "x +", "sin", "(x", "x^y", "bogus(x)", "x ~ y", "1..2"])
def test_parse_errors(bad):
    with pytest.raises(sx.ParseError):
        sx.parse(bad)


def test_parse_error_mentions_position():
    with pytest.raises(sx.ParseError) as err:
        sx.parse("x + * y")
    assert "position" in str(err.value)


@pytest.mark.parametrize(
    "e",
    [
        X + Y * 2,
        sx.sin(X) * sx.exp(Y) - sx.sqrt(1 + X**2),
        sx.pow_(1 + Y**2, Fraction(-3, 2)),
        -X * Y + sx.cos(X * Y),
    ],
)
def test_to_string_round_trips(e):
    back = sx.parse(str(e))
    delta = e - back
    assert sx.is_zero(delta, BOX, samples=50, seed=2).passed


# ---------------------------------------------------------------------------
# property tests


_leaf = st.sampled_from([X, Y, sx.Const(0.5), sx.Const(-1.5), sx.Const(2.0)])


def _combine(children):
    return st.one_of(
        st.tuples(children, children).map(lambda ab: sx.add(*ab)),
        st.tuples(children, children).map(lambda ab: sx.mul(*ab)),
        children.map(sx.sin),
        children.map(sx.cos),
        children.map(lambda e: sx.exp(sx.mul(sx.Const(0.25), e))),
    )


_expr_strategy = st.recursive(_leaf, _combine, max_leaves=8)


@settings(max_examples=40, deadline=None)
@given(_expr_strategy)
def test_mixed_partials_commute(e):
    mixed = sx.diff(sx.diff(e, "x"), "y") - sx.diff(sx.diff(e, "y"), "x")
    assert sx.is_zero(mixed, BOX, samples=40, tol=1e-8, seed=7).passed


@settings(max_examples=40, deadline=None)
@given(_expr_strategy)
def test_parse_of_printed_tree_matches(e):
    back = sx.parse(sx.to_string(e))
    assert sx.is_zero(e - back, BOX, samples=30, tol=1e-9, seed=13).passed


@settings(max_examples=30, deadline=None)
@given(_expr_strategy, st.integers(min_value=0, max_value=2**31 - 1))
def test_substitute_then_evaluate_agrees(e, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(-1, 1, size=2)
    swapped = sx.substitute(e, {"x": sx.Const(a), "y": sx.Const(b)})
    direct = sx.evaluate(e, {"x": a, "y": b})
    assert sx.evaluate(swapped, {}) == pytest.approx(direct, rel=1e-12, abs=1e-12)
