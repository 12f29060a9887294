import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wazewski.core import ExtPoint, FieldSpec
from wazewski.exprlang import (
    BinOp,
    Const,
    EvaluationError,
    ExprSyntaxError,
    Neg,
    UndeclaredIdentifier,
    Var,
    compile_function,
    evaluate,
    format_expr,
    free_names,
    jet_evaluate,
    lie_derivatives,
    parse_expression,
    partial_derivative,
)

from randexpr import random_expr

XY = ["x", "y", "t"]


def ev(src, **env):
    return evaluate(parse_expression(src, list(env)), env)


@pytest.mark.parametrize(
    "src, value",
    [
        ("1 + 2 * 3", 7.0),
        ("(1 + 2) * 3", 9.0),
        ("2 ^ 3 ^ 2", 512.0),
        ("-2 ^ 2", -4.0),
        ("2 ^ -1", 0.5),
        ("8 / 4 / 2", 1.0),
        ("10 - 4 - 3", 3.0),
        ("-(-3)", 3.0),
        ("1e-3 * 1000", 1.0),
        (".5 + 1.", 1.5),
        ("pi", math.pi),
        ("clamp(5, -1, 2)", 2.0),
        ("min(3, -4) + max(3, -4)", -1.0),
        ("abs(-2) * sign(-0.1)", -2.0),
        ("sign(0)", 0.0),
        ("sqrt(16) + exp(0) + log(1)", 5.0),
    ],
)
def test_precedence_and_functions(src, value):
    assert ev(src) == pytest.approx(value, rel=1e-15)


def test_variables_and_params():
    e = parse_expression("a*cos(y) + x*sin(y)", ["x", "y", "a"])
    assert free_names(e) == {"a", "x", "y"}
    assert evaluate(e, {"x": 2.0, "y": math.pi / 2, "a": -1.0}) == pytest.approx(2.0)


@pytest.mark.parametrize(
    "src, offset",
    [("x +", 3), ("(x + 1", 6), ("x $ 1", 2), ("sin(x, y)", 0), ("", 0), ("2 3", 2)],
)
def test_syntax_errors_carry_offset(src, offset):
    with pytest.raises(ExprSyntaxError) as info:
        parse_expression(src, XY)
    assert info.value.position == offset


def test_trailing_operator_offset_is_end_of_input():
    with pytest.raises(ExprSyntaxError) as info:
        parse_expression("x1 +", ["x1"])
    assert info.value.position == 4


def test_undeclared_identifier():
    with pytest.raises(UndeclaredIdentifier) as info:
        parse_expression("x + zz", XY)
    assert info.value.name == "zz"
    assert info.value.position == 4


def test_unknown_function_is_rejected():
    with pytest.raises(ExprSyntaxError):
        parse_expression("foo(x)", XY)


@pytest.mark.parametrize("src", ["log(0 - 1)", "sqrt(-1)", "1 / 0", "(-2) ^ 0.5"])
def test_evaluation_errors_name_node(src):
    with pytest.raises(EvaluationError) as info:
        ev(src)
    assert info.value.node is not None


def test_tree_shapes():
    e = parse_expression("-x ^ 2", XY)
    assert e == Neg(BinOp("^", Var("x"), Const(2.0)))
    e = parse_expression("x - y - 1", XY)
    assert e == BinOp("-", BinOp("-", Var("x"), Var("y")), Const(1.0))


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_format_round_trip(seed):
    rng = random.Random(seed)
    src = random_expr(rng, ["x", "y"], 4)
    e = parse_expression(src, XY)
    printed = format_expr(e)
    assert parse_expression(printed, XY) == e
    assert format_expr(parse_expression(printed, XY)) == printed


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1),
       st.floats(-2, 2), st.floats(-2, 2))
def test_compiled_matches_interpreter(seed, x, y):
    rng = random.Random(seed)
    src = random_expr(rng, ["x1", "x2", "a"], 4)
    e = parse_expression(src, ["x1", "x2", "t", "a"])
    f = compile_function([e], ["x1", "x2"], {"a": 0.7})
    assert f(0.0, [x, y])[0] == evaluate(e, {"x1": x, "x2": y, "t": 0.0, "a": 0.7})


def test_jets_of_elementary_functions():
    # x(t) = 0.3 + t: Taylor coefficients of exp, sin, log, sqrt, pow
    n = 6
    env = {"x": [0.3, 1.0] + [0.0] * (n - 2)}
    for src, fn in [("exp(x)", math.exp), ("sin(x)", math.sin), ("cos(x)", math.cos),
                    ("log(x)", math.log), ("sqrt(x)", math.sqrt), ("x ^ 2.5", lambda v: v ** 2.5),
                    ("1 / (1 + x ^ 2)", lambda v: 1 / (1 + v * v))]:
        jet = jet_evaluate(parse_expression(src, ["x"]), env, n)
        # compare coefficient k with the central finite difference of order k
        assert jet[0] == pytest.approx(fn(0.3), rel=1e-14)
        h = 1e-5
        d1 = (fn(0.3 + h) - fn(0.3 - h)) / (2 * h)
        assert jet[1] == pytest.approx(d1, rel=1e-7)
        h = 1e-3
        d2 = (fn(0.3 + h) - 2 * fn(0.3) + fn(0.3 - h)) / h**2
        assert 2 * jet[2] == pytest.approx(d2, rel=1e-5)


def test_partial_derivative():
    g = parse_expression("x^2 * y + sin(y)", XY)
    env = {"x": 1.5, "y": 0.5, "t": 0.0}
    assert partial_derivative(g, env, "x") == pytest.approx(2 * 1.5 * 0.5)
    assert partial_derivative(g, env, "y") == pytest.approx(1.5**2 + math.cos(0.5))


def test_lie_derivatives_of_parabola():
    # x' = 1, y' = -x on g = 3 - y at (0, 3): g' = x, g'' = 1
    field = FieldSpec.from_strings(["1", "-x1"])
    g = field.parse("3 - x2")
    assert lie_derivatives(field, g, ExtPoint((0.0, 3.0), 0.0), 4) == [0.0, 1.0, 0.0, 0.0]


def test_lie_derivatives_time_dependent():
    # x' = t, g = x: g' = t, g'' = 1
    field = FieldSpec.from_strings(["t"])
    g = field.parse("x1")
    d = lie_derivatives(field, g, ExtPoint((0.0,), 2.0), 3)
    assert d == pytest.approx([2.0, 1.0, 0.0])


def test_one_sided_jets_of_nonsmooth_functions():
    # at x = 0 moving right, abs and sign follow the branch taken for t > 0
    env = {"x": [0.0, 1.0, 0.0]}
    assert jet_evaluate(parse_expression("abs(x)", ["x"]), env, 3) == [0.0, 1.0, 0.0]
    assert jet_evaluate(parse_expression("sign(x)", ["x"]), env, 3) == [1.0, 0.0, 0.0]
    assert jet_evaluate(parse_expression("sign(x)", ["x"]), {"x": [0.0, -2.0, 0.0]}, 3)[0] == -1.0
    assert jet_evaluate(parse_expression("clamp(x, -1, 0)", ["x"]), env, 3) == [0.0, 0.0, 0.0]
