import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from stateverify.expr import (
    ExprDomainError, ExprSyntaxError, Jet, UndeclaredVariableError, compile_expr, compile_tuple, evaluate,
    free_vars, grad, hessian, jacobian_many, parse_expr, substitute, to_text,
)

X, Y = sp.symbols("x y")


def _leaf():
    return st.one_of(
        st.just(("x", X)), st.just(("y", Y)),
        st.integers(1, 5).map(lambda k: (str(k), sp.Integer(k))),
        st.sampled_from([("0.5", sp.Rational(1, 2)), ("1.5e0", sp.Rational(3, 2))]),
    )


def _extend(children):
    def binop(op):
        def build(a, b):
            (ta, sa), (tb, sb) = a, b
            if op == "/":
                return f"({ta}) / (1 + ({tb})^2)", sa / (1 + sb ** 2)
            return f"({ta}) {op} ({tb})", {"+": sa + sb, "-": sa - sb, "*": sa * sb}[op]
        return st.builds(build, children, children)

    def func(name):
        def build(a):
            ta, sa = a
            if name == "log":
                return f"log(1 + ({ta})^2)", sp.log(1 + sa ** 2)
            if name == "exp":
                return f"exp(sin({ta}))", sp.exp(sp.sin(sa))
            return f"{name}({ta})", getattr(sp, name)(sa)
        return st.builds(build, children)

    def power(a, k):
        ta, sa = a
        return f"({ta})^{k}", sa ** k

    def neg(a):
        return f"-({a[0]})", -a[1]

    return st.one_of(binop("+"), binop("-"), binop("*"), binop("/"), func("sin"), func("cos"),
                     func("exp"), func("log"), st.builds(power, children, st.integers(0, 3)),
                     st.builds(neg, children))


EXPRS = st.recursive(_leaf(), _extend, max_leaves=8)
POINTS = st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))


@pytest.mark.parametrize("text,value", [
    ("1 + 2*3", 7.0), ("2*3^2", 18.0), ("-2^2", -4.0), ("1 - 2 - 3", -4.0), ("8/4/2", 1.0),
    ("-x^2", -9.0), ("x^-1", 1 / 3), ("(x + 1)^2", 16.0), ("--x", 3.0), ("1e-3*x", 0.003),
    ("sin(x)^2 + cos(x)^2", 1.0),
])
def test_precedence_and_values(text, value):
    assert evaluate(parse_expr(text), {"x": 3.0}) == pytest.approx(value, rel=1e-15, abs=1e-15)


@pytest.mark.parametrize("text", ["2^3^2", "2^0.5", "1 +", "(x", "x $ 2", "sin x", ""])
def test_syntax_errors(text):
    with pytest.raises(ExprSyntaxError):
        parse_expr(text)


def test_undeclared_and_params():
    with pytest.raises(UndeclaredVariableError):
        parse_expr("u + w", {"u"})
    e = parse_expr("a*u", {"u"}, {"a": 2.5})
    assert free_vars(e) == {"u"}
    assert evaluate(e, {"u": 2.0}) == 5.0


@pytest.mark.parametrize("text", ["log(x - 3)", "1/(x - 3)", "(x - 3)^-2"])
def test_domain_errors(text):
    with pytest.raises(ExprDomainError):
        evaluate(parse_expr(text), {"x": 3.0})


def test_domain_error_vectorized():
    fn = compile_expr(parse_expr("log(x)"), ("x",))
    with pytest.raises(ExprDomainError):
        fn(np.array([1.0, -1.0]))


def test_substitute():
    e = substitute(parse_expr("x*y + x"), {"x": parse_expr("t^2")})
    assert evaluate(e, {"t": 2.0, "y": 3.0}) == 16.0


@settings(max_examples=150, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(EXPRS, POINTS)
def test_print_parse_round_trip(pair, pt):
    e = parse_expr(pair[0])
    e2 = parse_expr(to_text(e))
    point = {"x": pt[0], "y": pt[1]}
    try:
        v1 = evaluate(e, point) if free_vars(e) <= {"x", "y"} else None
    except ExprDomainError:
        return
    assert to_text(e2) == to_text(e)
    assert evaluate(e2, point) == v1


@settings(max_examples=150, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(EXPRS, POINTS)
def test_gradient_and_hessian_match_sympy(pair, pt):
    text, sym = pair
    e = parse_expr(text)
    point = {"x": pt[0], "y": pt[1]}
    subs = {X: pt[0], Y: pt[1]}
    g = grad(e, ["x", "y"], point)
    H = hessian(e, ["x", "y"], point)
    g_ref = [float(sp.diff(sym, v).evalf(subs=subs)) for v in (X, Y)]
    H_ref = [[float(sp.diff(sym, a, b).evalf(subs=subs)) for b in (X, Y)] for a in (X, Y)]
    scale = 1 + max(map(abs, g_ref))
    np.testing.assert_allclose(g, g_ref, rtol=1e-9, atol=1e-9 * scale)
    np.testing.assert_allclose(H, H_ref, rtol=1e-8, atol=1e-8 * (1 + np.max(np.abs(H_ref))))
    assert np.array_equal(H, H.T)


@settings(max_examples=80, deadline=None)
@given(EXPRS, POINTS)
def test_gradient_matches_central_differences(pair, pt):
    e = parse_expr(pair[0])
    point = {"x": pt[0], "y": pt[1]}
    g = grad(e, ["x", "y"], point)
    h = 1e-5
    for j, v in enumerate(("x", "y")):
        up = dict(point, **{v: point[v] + h})
        dn = dict(point, **{v: point[v] - h})
        fd = (evaluate(e, up) - evaluate(e, dn)) / (2 * h)
        assert fd == pytest.approx(g[j], rel=1e-5, abs=1e-5 * (1 + abs(evaluate(e, point))))


@settings(max_examples=60, deadline=None)
@given(EXPRS, st.lists(POINTS, min_size=1, max_size=6))
def test_batched_paths_agree(pair, pts):
    e = parse_expr(pair[0])
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    vals, jac, hes = jacobian_many([compile_expr(e, ("x", "y"))], [xs, ys], order=2)
    tup = compile_tuple([e, e], ("x", "y"))
    for k, (a, b) in enumerate(pts):
        point = {"x": a, "y": b}
        assert vals[k, 0] == pytest.approx(evaluate(e, point), rel=1e-14, abs=1e-14)
        np.testing.assert_allclose(jac[k, 0], grad(e, ["x", "y"], point), rtol=1e-13, atol=1e-13)
        np.testing.assert_allclose(hes[k, 0], hessian(e, ["x", "y"], point), rtol=1e-12, atol=1e-12)
        assert tup(a, b)[0] == pytest.approx(vals[k, 0], rel=1e-14, abs=1e-14)


def test_compile_tuple_domain_error():
    fn = compile_tuple([parse_expr("log(x)")], ("x",))
    assert fn(math.e)[0] == pytest.approx(1.0)
    with pytest.raises(ExprDomainError):
        fn(0.0)


def test_jet_seed_shapes():
    jets = Jet.seed([np.arange(3.0), np.ones(3)], 2)
    out = compile_expr(parse_expr("x*y^2"), ("x", "y"))(*jets)
    np.testing.assert_allclose(out.val, [0, 1, 2])
    assert np.shape(out.d) == (2, 3)
