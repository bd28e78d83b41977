import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anisogalerkin.domain import RectDomain
from anisogalerkin.field_dsl import (BinOp, FieldEvalError, ParseError, differentiate, evaluate,
                                     lipschitz_estimate, parse)
from anisogalerkin.verify import random_expression


def test_root_operator():
    e = parse("2 + 0.2*sin(3*x1)*t")
    assert isinstance(e.node, BinOp) and e.node.op == "+"


@pytest.mark.parametrize("text, point, want", [
    ("x1", (0.5, 0.0), 0.5),
    ("2", (0.3, 0.7, 0.1), 2.0),
    ("sin(0)", (0.0,), 0.0),
    ("exp(1)", (0.0,), math.e),
    ("2^3^2", (0.0,), 512.0),          # right associative
    ("-2^2", (0.0,), -4.0),            # unary minus binds looser than ^
    ("2**3", (0.0,), 8.0),
    ("min(x1, 3) + max(x1, 3)", (1.0, 0.0), 4.0),
    ("pi", (0.0,), math.pi),
])
def test_evaluate(text, point, want):
    assert evaluate(parse(text), point) == pytest.approx(want, rel=1e-12, abs=1e-15)


def test_division_by_zero_is_an_error():
    with pytest.raises(FieldEvalError):
        evaluate(parse("1/(x1-x1)"), (0.3, 0.0))


@pytest.mark.parametrize("text", ["log(x1 - 1)", "sqrt(-1 - x1)", "exp(1000*x1)"])
def test_non_finite_is_an_error(text):
    with pytest.raises(FieldEvalError):
        evaluate(parse(text), (1.0, 0.0))


@pytest.mark.parametrize("text, offset", [
    ("2 +", 3),
    ("sin(x1", 6),
    ("2 $ 3", 2),
    ("foo(x1)", 0),       # unknown function
    ("sin(x1, x2)", 0),   # arity
    ("y + 1", 0),         # unknown identifier
])
def test_parse_errors_carry_offsets(text, offset):
    with pytest.raises(ParseError) as info:
        parse(text)
    assert info.value.offset == offset


def test_byte_offset_counts_utf8():
    with pytest.raises(ParseError) as info:
        parse("x1 + é")
    assert info.value.offset == 5


def test_dimension_limit():
    parse("x2", dim=2)
    with pytest.raises(ParseError):
        parse("x3", dim=2)


@pytest.mark.parametrize("text, var, point, want", [
    ("x1*x1", "x1", (0.7, 0.0), 1.4),
    ("sin(t)", "t", (0.0, 0.4), math.cos(0.4)),
    ("2 + 0.1*x1", "x1", (0.9, 0.2), 0.1),
    ("abs(x1)", "x1", (0.0, 0.0), 0.0),
    ("abs(x1)", "x1", (-1.0, 0.0), -1.0),
    ("min(x1, x2)", "x1", (1.0, 1.0, 0.0), 1.0),   # ties go to the first argument
    ("max(x1, x2)", "x2", (1.0, 1.0, 0.0), 0.0),
    ("x1^x2", "x2", (2.0, 3.0, 0.0), 8.0 * math.log(2.0)),
])
def test_derivatives(text, var, point, want):
    assert evaluate(differentiate(parse(text), var), point) == pytest.approx(want, rel=1e-14, abs=1e-15)


def test_derivative_is_again_an_expression():
    d = differentiate(parse("x1^3*sin(t)"), "x1")
    assert evaluate(parse(str(d)), (2.0, 0.5)) == pytest.approx(12 * math.sin(0.5))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_derivative_matches_central_differences(seed):
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(1, 4))
    e = parse(random_expression(rng, dim), dim)
    x, t, h = list(rng.uniform(0.1, 1.9, dim)), float(rng.uniform(0.1, 1.9)), 1e-5
    for j in range(dim):
        xp, xm = list(x), list(x)
        xp[j] += h
        xm[j] -= h
        fd = (float(e(xp, t)) - float(e(xm, t))) / (2 * h)
        d = float(differentiate(e, f"x{j + 1}")(x, t))
        assert abs(fd - d) <= 1e-6 * max(1.0, abs(d))
    fd = (float(e(x, t + h)) - float(e(x, t - h))) / (2 * h)
    d = float(differentiate(e, "t")(x, t))
    assert abs(fd - d) <= 1e-6 * max(1.0, abs(d))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_print_parse_round_trip(seed):
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(1, 4))
    e = parse(random_expression(rng, dim), dim)
    again = parse(str(e), dim)
    assert again.node == e.node
    pts = [rng.uniform(0, 2, 100) for _ in range(dim)]
    t = rng.uniform(0, 2, 100)
    np.testing.assert_array_equal(again(pts, t), e(pts, t))


def test_evaluation_broadcasts_constants():
    x = np.linspace(0, 1, 5)
    assert parse("3")([x], 0.0).shape == (5,)


def test_lipschitz_examples():
    unit = RectDomain((1.0,))
    assert lipschitz_estimate(parse("2"), unit, 1.0).value == 0.0
    assert lipschitz_estimate(parse("2 + 0.1*x1"), unit, 1.0).value == pytest.approx(0.11, rel=1e-12)
    est = lipschitz_estimate(parse("2 + 0.2*sin(x1)"), RectDomain((math.pi,)), 1.0)
    assert est.value == pytest.approx(0.22, rel=0.02)
    assert not est.certified
