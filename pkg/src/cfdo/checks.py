"""Fast built-in invariant checks, run by ``cfdo check``."""

from __future__ import annotations

import math
import time
from typing import Callable, TextIO

import numpy as np

from .conformable import CoordinateMap, conformable_derivative, conformable_integral
from .expr import Expression
from .problem import ProblemSpec, shift_problem
from .solver import delta, solve_phi, wronskian_drift
from .spectrum import find_eigenvalues
from .trace import contour_identity_check, extrapolate_tail, trace1_sides


def _calculus() -> float:
    f = Expression.from_source("t^2*sin(t) + cos(3*t)")
    worst = 0.0
    for alpha in (0.3, 0.5, 1.0):
        for x in (0.5, 1.0, math.pi):
            worst = max(worst, abs(conformable_derivative(lambda t: np.asarray(
                [conformable_integral(f, float(s), alpha) for s in np.atleast_1d(t)]), x, alpha) - f(x)))
            lhs = conformable_integral(lambda t: _dalpha(f, t, alpha), x, alpha)
            worst = max(worst, abs(lhs - (f(x) - f(0.0))))
    return worst


def _dalpha(f: Expression, t, alpha: float):
    t = np.asarray(t, dtype=float)
    return np.power(t, 1.0 - alpha) * f.deriv(t)


def _coordinate_map() -> float:
    x = np.geomspace(1e-12, math.pi, 200)
    return max(float(np.max(np.abs(CoordinateMap(a).x(CoordinateMap(a).u(x)) / x - 1.0))) for a in (0.3, 0.7, 1.0))


def _exact_phi() -> float:
    worst = 0.0
    for alpha in (0.5, 1.0):
        spec = ProblemSpec.create(alpha, "0", "0", h=2.0)
        for lam in (0.5, 3.0, 17.0):
            th = lam * spec.U
            y = solve_phi(spec, lam).states[-1].y
            worst = max(worst, abs(y - (math.cos(th) + 2.0 / lam * math.sin(th))))
    return worst


def _consistency() -> float:
    spec = ProblemSpec.create(0.7, "0.3*cos(2*t)", "exp(-t)", 0.4, -0.2)
    cv = delta(spec, 6.3)
    _, drift = wronskian_drift(spec, 6.3)
    return max(cv.discrepancy, drift)


def _constant_q_spectrum() -> float:
    spec = ProblemSpec.create(1.0, "0", "0.1")
    s = find_eigenvalues(spec, 10)
    n = np.arange(1, 11)
    exact = np.sqrt(n * n + 0.1)
    pair = sorted(np.real(s.zero_pair))
    return float(max(np.max(np.abs(s.positive - exact)), np.max(np.abs(s.negative + exact)),
                     abs(pair[1] - math.sqrt(0.1)), abs(pair[0] + math.sqrt(0.1)), abs(s.certified_count - 22)))


def _shift_covariance() -> float:
    spec = ProblemSpec.create(0.8, "0.5 + 0.2*sin(t)", "t", 0.1, 0.2)
    shifted, s = shift_problem(spec)
    a, b = find_eigenvalues(spec, 6), find_eigenvalues(shifted, 6)
    return float(max(np.max(np.abs(a.positive - s - b.positive)), np.max(np.abs(a.negative - s - b.negative))))


def _contour() -> float:
    return contour_identity_check(ProblemSpec.create(1.0, "0.2*sin(t)", "cos(t)", 0.3, 0.3), 5, 2)


def _symmetric_trace() -> float:
    return abs(trace1_sides(ProblemSpec.create(1.0, "0", "0.1"), 40).residual)


def _extrapolation() -> float:
    n = np.arange(1, 65)
    return abs(extrapolate_tail(3.0 + 5.0 / n) - 3.0)


CHECKS: list[tuple[str, Callable[[], float], float]] = [
    ("conformable calculus identities", _calculus, 1e-8),
    ("coordinate map round trip", _coordinate_map, 1e-13),
    ("exact solution for p = q = 0", _exact_phi, 1e-9),
    ("Delta consistency and Wronskian constancy", _consistency, 1e-7),
    ("closed-form spectrum for constant q", _constant_q_spectrum, 1e-8),
    ("spectrum shift covariance", _shift_covariance, 1e-8),
    ("contour identity, moment 2", _contour, 1e-5),
    ("first trace formula, symmetric case", _symmetric_trace, 1e-6),
    ("tail extrapolation", _extrapolation, 1e-12),
]


def run_checks(stream: TextIO) -> bool:
    """Run every check, print one line each, and return True when all pass."""
    ok = True
    for name, fn, tol in CHECKS:
        start = time.perf_counter()
        try:
            value = fn()
            passed = bool(value < tol)
            detail = f"{value:.3e} (tolerance {tol:.0e})"
        except Exception as exc:  # noqa: BLE001 - a crashing check is a failed check
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}  [{time.perf_counter() - start:.1f} s]", file=stream)
    return ok
