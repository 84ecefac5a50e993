from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfdo.conformable import (
    CoordinateMap,
    DomainError,
    FractionalOrder,
    PencilState,
    conformable_derivative,
    conformable_integral,
    fractional_wronskian,
    inner_product_alpha,
)
from cfdo.expr import Expression
from cfdo.quadrature import graded_edges, integrate_graded, panel_rule

ALPHAS = (0.3, 0.5, 0.8, 1.0)


class TestOrder:
    @pytest.mark.parametrize("alpha", [0.0, -0.2, 1.0000001, math.nan])
    def test_rejects_out_of_range(self, alpha):
        with pytest.raises(DomainError):
            FractionalOrder(alpha)

    def test_accepts_one(self):
        assert FractionalOrder(1) == 1.0


class TestDerivative:
    def test_power_law(self):
        # D^a t^k = k t^(k - a)
        f = Expression.from_source("t^3")
        assert conformable_derivative(f, 2.0, 0.5) == pytest.approx(3 * 2.0 ** 2.5, rel=1e-13)

    def test_classical_at_alpha_one(self):
        f = Expression.from_source("sin(t)")
        assert conformable_derivative(f, 1.0, 1.0) == pytest.approx(math.cos(1.0), rel=1e-14)

    def test_zero_is_right_limit(self):
        assert conformable_derivative(Expression.from_source("t"), 0.0, 0.5) == 0.0
        assert conformable_derivative(lambda t: np.sqrt(np.asarray(t)) * 2, 0.0, 0.5) == pytest.approx(1.0, abs=1e-6)

    def test_callable_without_derivative(self):
        val = conformable_derivative(lambda t: np.exp(t), 1.3, 0.7)
        assert val == pytest.approx(1.3 ** 0.3 * math.exp(1.3), rel=1e-9)

    def test_negative_x(self):
        with pytest.raises(DomainError):
            conformable_derivative(Expression.from_source("t"), -0.1, 0.5)


class TestIntegral:
    @pytest.mark.parametrize("alpha", ALPHAS)
    def test_monomial(self, alpha):
        # I_a t^k (x) = x^(k + a) / (k + a)
        x = 2.2
        got = conformable_integral(Expression.from_source("t^2"), x, alpha)
        assert got == pytest.approx(x ** (2 + alpha) / (2 + alpha), rel=1e-12)

    def test_constant_gives_u(self):
        assert conformable_integral(lambda t: np.ones_like(t), math.pi, 0.4) == pytest.approx(CoordinateMap(0.4).U)

    def test_inner_product_is_symmetric(self):
        f, g = Expression.from_source("cos(t)"), Expression.from_source("t + 1")
        assert inner_product_alpha(f, g, 0.6) == pytest.approx(inner_product_alpha(g, f, 0.6), rel=1e-14)
        assert inner_product_alpha(f, f, 0.6) > 0


class TestCoordinateMap:
    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.05, 1.0), st.floats(1e-8, math.pi))
    def test_round_trip(self, alpha, x):
        cm = CoordinateMap(alpha)
        assert cm.x(cm.u(x)) == pytest.approx(x, rel=1e-12)

    def test_length(self):
        assert CoordinateMap(0.5).U == pytest.approx(2 * math.sqrt(math.pi))


@st.composite
def smooth_functions(draw):
    a = draw(st.lists(st.floats(-2, 2), min_size=3, max_size=3))
    k = draw(st.integers(1, 3))
    return Expression.from_source(f"({a[0]!r} + {a[1]!r}*t + {a[2]!r}*t^2)*sin({k}*t) + cos(t)")


class TestFundamentalIdentities:
    @settings(max_examples=10, deadline=None)
    @given(smooth_functions(), st.sampled_from(ALPHAS), st.sampled_from([0.5, 1.0, math.pi]))
    def test_derivative_of_integral(self, f, alpha, x):
        def F(t):
            return np.asarray([conformable_integral(f, float(s), alpha, rtol=1e-13) for s in np.atleast_1d(t)])
        assert abs(conformable_derivative(F, x, alpha) - f(x)) < 1e-8

    @settings(max_examples=10, deadline=None)
    @given(smooth_functions(), st.sampled_from(ALPHAS), st.sampled_from([0.5, 1.0, math.pi]))
    def test_integral_of_derivative(self, f, alpha, x):
        def Df(t):
            return np.power(t, 1 - alpha) * f.deriv(t)
        assert abs(conformable_integral(Df, x, alpha) - (f(x) - f(0.0))) < 1e-8

    @settings(max_examples=10, deadline=None)
    @given(smooth_functions(), smooth_functions(), st.sampled_from(ALPHAS))
    def test_integration_by_parts(self, f, g, alpha):
        def d(fn):
            return lambda t: np.power(t, 1 - alpha) * fn.deriv(t)
        lhs = conformable_integral(lambda t: f(t) * d(g)(t), math.pi, alpha)
        boundary = f(math.pi) * g(math.pi) - f(0.0) * g(0.0)
        rhs = boundary - conformable_integral(lambda t: g(t) * d(f)(t), math.pi, alpha)
        assert abs(lhs - rhs) < 1e-8


class TestWronskian:
    def test_antisymmetric(self):
        y, z = PencilState(1.0, 2.0, 3.0), PencilState(1.0, -1.0, 0.5)
        assert fractional_wronskian(y, z) == -fractional_wronskian(z, y) == 2.0 * 0.5 - (-1.0) * 3.0

    def test_needs_same_point(self):
        with pytest.raises(DomainError):
            fractional_wronskian(PencilState(1.0, 1.0, 0.0), PencilState(2.0, 1.0, 0.0))

    def test_state_must_be_finite(self):
        with pytest.raises(DomainError):
            PencilState(0.0, math.inf, 0.0)


class TestQuadrature:
    def test_graded_rule_handles_endpoint_singularity(self):
        # integral of u^(-1/2) over [0, 1] is 2; the graded mesh resolves it
        u, w = panel_rule(graded_edges(1.0, 8, True))
        assert np.dot(w, u ** -0.5) == pytest.approx(2.0, rel=1e-9)

    def test_adaptive_oscillatory(self):
        val = integrate_graded(lambda u: np.cos(40 * u), 2.0, rtol=1e-12)
        assert val == pytest.approx(math.sin(80.0) / 40, abs=1e-13)
