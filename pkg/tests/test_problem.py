from __future__ import annotations

import math

import mpmath

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from cfdo.conformable import DomainError
from cfdo.expr import EvaluationError
from cfdo.problem import (
    C_from_B,
    ProblemSpec,
    UndefinedConstantError,
    accumulated_Q,
    asymptotic_delta,
    coefficient_functions,
    compute_constants,
    delta0,
    eigen_guess,
    sequence_frequency,
    sequence_identity_residuals,
    sequence_terms,
    shift_constant,
    shift_problem,
    shifted_c2,
)

t = sp.symbols("t", positive=True)


def sympy_constants(alpha, p, q, h, H):
    """c0..c3 and gamma by exact integration against t**(alpha - 1) dt."""
    a = sp.nsimplify(alpha)
    w = t ** (a - 1)
    pi = sp.pi
    I = sp.integrate((q + p ** 2) * w, (t, 0, pi))
    pp, p0 = p.subs(t, pi), p.subs(t, 0)
    c0 = sp.integrate(p * w, (t, 0, pi))
    c1 = h + H + I / 2
    c2 = (pp * (pp - p0) / 2 - (pp ** (1 + a) - p0 ** (1 + a)) / 2
          - (pp - p0) ** (1 + a) / (4 * (1 + a)) + h * H + (h + H) / 2 * I + I ** 2 / 8)
    c3 = (H - h) * (pp - p0) / 2 + sp.integrate((q + p ** 2) * (2 * p - pp - p0) * w, (t, 0, pi)) / 4
    gamma = a * c0 / pi ** a
    return [float(sp.N(v, 30)) for v in (c0, c1, c2, c3, gamma)]


ORACLE_CASES = [
    (1.0, sp.Rational(1, 5) * t, sp.cos(t), 0.3, -0.1),
    (0.5, sp.Rational(3, 10) + sp.Rational(1, 5) * t, t, 0.2, 0.4),
    (0.5, sp.Integer(0), sp.Rational(1, 10), 0.0, 0.0),
    (0.25, sp.Rational(1, 2), t ** 2, 1.0, 0.5),
]


class TestConstants:
    @pytest.mark.parametrize("alpha, p, q, h, H", ORACLE_CASES)
    def test_against_symbolic_integration(self, alpha, p, q, h, H):
        spec = ProblemSpec.create(alpha, str(p).replace("**", "^"), str(q).replace("**", "^"), h, H)
        k = compute_constants(spec)
        expected = sympy_constants(alpha, p, q, h, H)
        assert [k.c0, k.c1, k.c2, k.c3, k.gamma] == pytest.approx(expected, rel=1e-10, abs=1e-12)

    def test_undefined_power_is_reported(self):
        spec = ProblemSpec.create(0.5, "-1 + 0.1*t", "0")
        with pytest.raises(UndefinedConstantError) as err:
            compute_constants(spec)
        assert err.value.exponent == 1.5
        k = compute_constants(spec, strict=False)
        assert math.isnan(k.c2) and k.undefined == ("c2",)

    def test_integer_exponent_allows_negative_base(self):
        assert math.isfinite(compute_constants(ProblemSpec.create(1.0, "-1 + 0.1*t", "0")).c2)

    def test_shifted_c2_matches_symbolic_sum_form(self):
        # p = 0.3 + 0.2 t at alpha = 1: shifted endpoint values are -0.1 pi and +0.1 pi
        spec = ProblemSpec.create(1.0, "0.3 + 0.2*t", "1", 0.2, 0.1)
        s = shift_constant(spec)
        assert s == pytest.approx(0.3 + 0.1 * math.pi)
        pp, p0 = 0.1 * math.pi, -0.1 * math.pi
        I = float(sp.N(sp.integrate(1 + (sp.Rational(3, 10) + t / 5) ** 2, (t, 0, sp.pi))))
        expected = (pp * (pp - p0) / 2 - (pp ** 2 + p0 ** 2) / 2 - (pp - p0) ** 2 / 8
                    + 0.02 + 0.15 * I + I * I / 8)
        assert shifted_c2(spec, s) == pytest.approx(expected, rel=1e-12)

    def test_shifted_c2_undefined_for_negative_base(self):
        spec = ProblemSpec.create(0.5, "0.2*sin(t)", "cos(t)")
        with pytest.raises(UndefinedConstantError):
            shifted_c2(spec, shift_constant(spec))
        assert math.isnan(shifted_c2(spec, shift_constant(spec), strict=False))


class TestProblemSpec:
    def test_accepts_numbers_and_text(self):
        spec = ProblemSpec.create(0.7, 0.5, "t")
        assert spec.p_is_constant and spec.p_pi == 0.5

    def test_rejects_nonfinite_coefficients(self):
        with pytest.raises(EvaluationError):
            ProblemSpec.create(1.0, "log(t)", "0")

    def test_rejects_bad_order(self):
        with pytest.raises(DomainError):
            ProblemSpec.create(1.5)

    def test_spacing(self):
        spec = ProblemSpec.create(0.5)
        assert spec.spacing == pytest.approx(0.5 * math.pi ** 0.5)

    @pytest.mark.parametrize("alpha", [0.3, 0.5, 1.0])
    def test_accumulated_Q(self, alpha):
        spec = ProblemSpec.create(alpha, "cos(t)")
        for x in (0.4, 2.0, math.pi):
            # term-by-term integration of the cosine series
            exact = float(x ** alpha / alpha * mpmath.hyp1f2(alpha / 2, 0.5, 1 + alpha / 2, -x * x / 4))
            assert accumulated_Q(spec, x) == pytest.approx(exact, abs=1e-11)

    def test_Q_outside_interval(self):
        with pytest.raises(DomainError):
            accumulated_Q(ProblemSpec.create(1.0, "t"), 4.0)


class TestShift:
    @settings(max_examples=15, deadline=None)
    @given(st.floats(0.2, 1.0), st.floats(-1, 1), st.floats(-1, 1))
    def test_shifted_problem_has_zero_mean(self, alpha, a, b):
        spec = ProblemSpec.create(alpha, f"{a!r} + {b!r}*sin(t)", "t")
        shifted, s = shift_problem(spec)
        assert abs(float(shifted.Q_u(shifted.U))) < 1e-10 * (1 + abs(s))

    def test_zero_shift_returns_same_problem(self):
        spec = ProblemSpec.create(1.0, "0", "1")
        assert shift_problem(spec) == (spec, 0.0)

    def test_literal_mode_shifts_by_c0(self):
        spec = ProblemSpec.create(0.5, "1", "0")
        assert shift_constant(spec, "literal-paper") == pytest.approx(2 * math.sqrt(math.pi))
        with pytest.raises(ValueError):
            shift_constant(spec, "other")


class TestSequences:
    @pytest.mark.parametrize("alpha", [0.5, 1.0])
    def test_printed_frequency_is_spectral_over_U(self, alpha):
        spec = ProblemSpec.create(alpha, "t")
        assert sequence_frequency(spec, 7) == pytest.approx(7 * spec.spacing)
        assert sequence_frequency(spec, 7, "printed") == pytest.approx(sequence_frequency(spec, 7) / spec.U)

    @pytest.mark.parametrize("frequency", ["spectral", "printed"])
    def test_B_n_is_a_difference_of_B(self, frequency):
        spec = ProblemSpec.create(0.6, "0.3*cos(2*t)", "exp(-t)", 0.2, 0.1)
        for n in (1, 4, 11):
            rb, _ = sequence_identity_residuals(spec, n, frequency)
            assert rb < 1e-11

    def test_C_n_is_a_sum_of_B_when_p_is_constant(self):
        spec = ProblemSpec.create(0.6, "0.4", "exp(-t)", 0.2, 0.1)
        for n in (1, 4, 11):
            _, rc = sequence_identity_residuals(spec, n)
            assert rc < 1e-11
        assert C_from_B(spec, [4])[0] == pytest.approx(sequence_terms(spec, 4).C_n, abs=1e-12)

    def test_C_n_sign_of_the_derivative_term(self):
        # printed C_n minus B(nu) + B(-nu) is -2 int D^a p cos(2 nu u) sin 2Q, checked by brute quadrature
        spec = ProblemSpec.create(1.0, "0.3*cos(2*t)", "exp(-t)")
        nu = sequence_frequency(spec, 2)
        u = np.linspace(0, spec.U, 200001)
        f = spec.dP(u) * np.cos(2 * nu * u) * np.sin(2 * spec.Q_u(u))
        gap = -2 * np.trapezoid(f, u)
        assert sequence_terms(spec, 2).C_n - C_from_B(spec, [2])[0] == pytest.approx(gap, abs=1e-8)
        assert abs(gap) > 1e-3

    def test_constant_coefficients_sequences(self):
        # q + p^2 = 0.1 constant and P' = 0: A_n = 0.05 * int_0^U cos(2 mu u) du = 0
        spec = ProblemSpec.create(1.0, "0", "0.1")
        term = sequence_terms(spec, 3)
        assert abs(term.A_n) < 1e-13 and abs(term.B_n) < 1e-13 and abs(term.C_n) < 1e-13

    def test_index_must_be_positive(self):
        with pytest.raises(ValueError):
            sequence_terms(ProblemSpec.create(1.0), 0)

    def test_coefficient_functions_at_zero(self):
        # A(0) = -1/2 int P' sin(2Q)... for p = 0 only the q term survives: B(0) = I/2
        spec = ProblemSpec.create(0.5, "0", "t")
        A, B = coefficient_functions(spec, 0.0)
        I = float(sp.N(sp.integrate(t * t ** sp.Rational(-1, 2), (t, 0, sp.pi))))
        assert A == pytest.approx(0.0, abs=1e-14) and B == pytest.approx(I / 2, rel=1e-11)


class TestAsymptotics:
    def test_eigen_guess_constant_q(self):
        # sqrt(n^2 + 0.1) = n + 0.05/n + O(n^-3); c1 = 0.05 pi
        spec = ProblemSpec.create(1.0, "0", "0.1")
        assert eigen_guess(spec, 40) == pytest.approx(40 + 0.05 / 40, abs=1e-12)

    def test_unperturbed_delta(self):
        spec = ProblemSpec.create(1.0)
        assert delta0(spec, 2.5) == pytest.approx(-2.5 * math.sin(2.5 * math.pi))
        assert asymptotic_delta(spec, 2.5) == pytest.approx(delta0(spec, 2.5))

    def test_forms_differ_only_in_the_oscillatory_integral(self):
        spec = ProblemSpec.create(1.0, "0.2*sin(t)", "cos(t)", 0.3, 0.3)
        d1 = asymptotic_delta(spec, 30.0, "printed")
        d2 = asymptotic_delta(spec, 30.0, "consistent")
        assert d1 != d2 and abs(d1 - d2) < 1.0
        with pytest.raises(ValueError):
            asymptotic_delta(spec, 30.0, "other")

    def test_zero_argument(self):
        with pytest.raises(DomainError):
            asymptotic_delta(ProblemSpec.create(1.0), 0.0)

    def test_asymptotic_delta_needs_defined_c2(self):
        spec = ProblemSpec.create(0.5, "-1 + 0.1*t", "0")
        with pytest.raises(UndefinedConstantError):
            asymptotic_delta(spec, 10.0, constants=compute_constants(spec, strict=False))

    def test_oscillatory_integrands_are_exact_for_constant_data(self):
        # with constant q + p^2 and p' = 0 the integral term is 0.5 c sin(lam U)/lam
        spec = ProblemSpec.create(0.5, "0", "0.2")
        lam = 12.3
        k = compute_constants(spec)
        th = lam * spec.U
        expected = (-lam * math.sin(th) + k.c1 * math.cos(th) + k.c2 / lam * math.sin(th)
                    + 0.5 * 0.2 * math.sin(lam * spec.U) / lam)
        assert asymptotic_delta(spec, lam, "consistent").real == pytest.approx(expected, rel=1e-12)


def test_q_spline_agrees_with_closed_form():
    spec = ProblemSpec.create(0.5, "t", "0")
    x = np.linspace(0, math.pi, 17)
    # int_0^x s * s^(-1/2) ds = (2/3) x^(3/2)
    assert np.allclose(accumulated_Q(spec, x), 2 / 3 * x ** 1.5, atol=1e-12)
