import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stateverify.integrate import (
    GridSignal, fd_derivative, half_grid, interp, quad, rk4_integrate, rk4_linear, signal_from_csv,
    signal_to_csv, uniform_nodes,
)


def test_exponential_to_1e10():
    s = rk4_integrate(lambda t, y: y, [1.0], (0.0, 1.0), 200)
    assert abs(s.segments[0].values[-1, 0] - math.e) <= 1e-10


def test_backward_direction():
    s = rk4_integrate(lambda t, y: y, [math.e], (0.0, 1.0), 200, direction="backward")
    assert abs(s.segments[0].values[0, 0] - 1.0) <= 1e-10
    assert s.segments[0].t[0] == 0.0


def test_observed_order_at_least_3_8():
    def err(n):
        s = rk4_integrate(lambda t, y: np.array([y[1], -y[0]]), [0.0, 1.0], (0.0, 2.0), n)
        return abs(s.segments[0].values[-1, 0] - math.sin(2.0))
    errs = [err(n) for n in (20, 40, 80)]
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert min(orders) >= 3.8


def test_linear_sweep_matches_general_rk4():
    # time-varying rotation with forcing
    def A(t):
        return np.array([[0.0, 1.0 + t], [-1.0, -0.1 * t]])

    def b(t):
        return np.array([math.sin(t), 1.0])

    N, h = 50, 2.0 / 50
    tf = half_grid(0.0, 2.0, N)
    Afine = np.stack([A(t) for t in tf])
    bfine = np.stack([b(t) for t in tf])
    lin = rk4_linear(Afine, bfine, [1.0, 0.0], h)
    ref = rk4_integrate(lambda t, y: A(t) @ y + b(t), [1.0, 0.0], (0.0, 2.0), N)
    np.testing.assert_allclose(lin, ref.segments[0].values, rtol=1e-13, atol=1e-13)
    back = rk4_linear(Afine, bfine, lin[-1], h, "backward")
    np.testing.assert_allclose(back[0], [1.0, 0.0], atol=1e-7)


def test_linear_sweep_rejects_bad_grid():
    with pytest.raises(ValueError):
        rk4_linear(np.zeros((4, 1, 1)), None, [1.0], 0.1)
    with pytest.raises(ValueError):
        rk4_linear(np.zeros((5, 1, 1)), None, [1.0], 0.1, "sideways")


def test_quad_quadratic_on_arc():
    t = uniform_nodes(1.0, 2.0, 2000)
    s = GridSignal.from_arrays([t], [(t - 1) * (t - 2)])
    assert quad(s)[0] == pytest.approx(-1 / 6, abs=1e-7)


def test_quad_over_subinterval_requires_nodes():
    t = uniform_nodes(0.0, 1.0, 10)
    s = GridSignal.from_arrays([t], [np.ones_like(t)])
    assert quad(s, (0.2, 0.6))[0] == pytest.approx(0.4)
    with pytest.raises(ValueError):
        quad(s, (0.25, 0.6))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=5, max_size=5), st.integers(5, 40))
def test_fd_derivative_exact_on_quartics(coef, n):
    t = np.linspace(-1.0, 1.0, n + 1)
    p = np.polynomial.Polynomial(coef)
    d = fd_derivative(p(t), t[1] - t[0])
    np.testing.assert_allclose(d, p.deriv()(t), atol=1e-9 * (1 + max(map(abs, coef))) * n)


def test_fd_derivative_needs_five_nodes():
    with pytest.raises(ValueError):
        fd_derivative(np.zeros(4), 0.1)


def _two_piece():
    t0, t1 = uniform_nodes(0.0, 1.0, 4), uniform_nodes(1.0, 2.0, 4)
    return GridSignal.from_arrays([t0, t1], [t0, t1 + 5.0])


def test_interp_one_sided_at_jump():
    s = _two_piece()
    assert interp(s, 1.0, "left")[0] == 1.0
    assert interp(s, 1.0, "right")[0] == 6.0
    with pytest.raises(ValueError):
        interp(s, 1.0)
    assert interp(s, 0.5)[0] == pytest.approx(0.5)
    assert s.jump(0)[0] == 5.0
    with pytest.raises(ValueError):
        interp(s, 2.5)


def test_signal_validation():
    with pytest.raises(ValueError):
        GridSignal.from_arrays([np.array([0.0, 1.0]), np.array([1.5, 2.0])], [np.zeros(2), np.zeros(2)])
    with pytest.raises(ValueError):
        GridSignal.from_arrays([np.array([0.0, 0.0])], [np.zeros(2)])


def test_csv_round_trip():
    s = _two_piece()
    text = signal_to_csv(s, ["v"])
    assert text.splitlines()[0] == "t,v,side"
    back = signal_from_csv(text)
    assert len(back.segments) == 2
    for a, b in zip(s.segments, back.segments):
        assert np.array_equal(a.t, b.t) and np.array_equal(a.values, b.values)
