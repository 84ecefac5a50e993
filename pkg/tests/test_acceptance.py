"""Numbered acceptance criteria, each at its stated tolerance and time budget.

Every test fills ``detail`` with the measured quantities; the terminal
summary prints one PASS/FAIL line per criterion.
"""

from __future__ import annotations

import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest
import sympy as sp

from cfdo.conformable import conformable_derivative, conformable_integral
from cfdo.expr import Expression
from cfdo.problem import ProblemSpec, asymptotic_delta, compute_constants, eigen_guesses
from cfdo.propagator import propagate
from cfdo.solver import delta, solve_phi, wronskian_drift
from cfdo.spectrum import contour_radius, find_eigenvalues
from cfdo.trace import PartialSumSeries, contour_identity, trace1_sides, trace2_sides

SEED = 20240611
TEST_SPEC = ProblemSpec.create(1.0, "0.2*sin(t)", "cos(t)", 0.3, 0.3)
TEST_SPEC_HALF = ProblemSpec.create(0.5, "0.2*sin(t)", "cos(t)", 0.3, 0.3)
GRADED = ProblemSpec.create(0.5, "0.5 + 0.2*t", "t", 0.1, 0.2)
CONSTANT_Q = ProblemSpec.create(1.0, "0", "0.1")


class Clock:
    def __init__(self, budget: float):
        self.budget = budget
        self.start = time.perf_counter()

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.start

    def within(self) -> bool:
        return self.elapsed < self.budget


def random_smooth(rng: np.random.Generator) -> Expression:
    a, b, c = map(float, rng.uniform(-2, 2, 3))
    k, m = rng.integers(1, 4, 2)
    d = float(rng.uniform(-1, 1))
    return Expression.from_source(f"({a!r} + {b!r}*t + {c!r}*t^2)*sin({k}*t) + {d!r}*cos({m}*t)")


@pytest.mark.acceptance(1, "calculus identities")
def test_calculus_identities(detail):
    clock = Clock(10.0)
    rng = np.random.default_rng(SEED)
    functions = [random_smooth(rng) for _ in range(20)]
    partners = [random_smooth(rng) for _ in range(20)]
    worst = {"d_of_int": 0.0, "int_of_d": 0.0, "parts": 0.0}
    for alpha in (0.3, 0.5, 0.8, 1.0):
        def d_alpha(fn):
            return lambda t: np.power(t, 1 - alpha) * fn.deriv(t)
        for f, g in zip(functions, partners):
            def F(t, f=f):
                return np.asarray([conformable_integral(f, float(s), alpha, rtol=1e-13) for s in np.atleast_1d(t)])
            for x in (0.5, 1.0, math.pi):
                worst["d_of_int"] = max(worst["d_of_int"], abs(conformable_derivative(F, x, alpha) - f(x)))
                lhs = conformable_integral(d_alpha(f), x, alpha)
                worst["int_of_d"] = max(worst["int_of_d"], abs(lhs - (f(x) - f(0.0))))
            by_parts = (conformable_integral(lambda t: f(t) * d_alpha(g)(t), math.pi, alpha)
                        - (f(math.pi) * g(math.pi) - f(0.0) * g(0.0))
                        + conformable_integral(lambda t: g(t) * d_alpha(f)(t), math.pi, alpha))
            worst["parts"] = max(worst["parts"], abs(by_parts))
    detail.update(worst)
    detail["seconds"] = clock.elapsed
    assert max(worst.values()) < 1e-8 and clock.within()


@pytest.mark.acceptance(2, "exact solution for p = q = 0")
def test_exact_solution(detail):
    clock = Clock(5.0)
    worst = 0.0
    for alpha in (0.3, 0.5, 0.8, 1.0):
        for h in (0.0, 0.7, -1.3):
            spec = ProblemSpec.create(alpha, "0", "0", h=h)
            for lam in (0.5, 3.0, 17.0):
                th = lam * spec.U
                exact = math.cos(th) + h / lam * math.sin(th)
                worst = max(worst, abs(solve_phi(spec, lam).states[-1].y - exact))
    detail.update(error=worst, seconds=clock.elapsed)
    assert worst < 1e-9 and clock.within()


@pytest.mark.acceptance(3, "Delta consistency and Wronskian constancy")
def test_consistency(detail):
    clock = Clock(30.0)
    rng = np.random.default_rng(SEED + 3)
    worst_disc = worst_drift = 0.0
    for _ in range(25):
        alpha = float(rng.uniform(0.3, 1.0))
        a, b, c, d = map(float, rng.uniform(-1, 1, 4))
        k = int(rng.integers(1, 4))
        spec = ProblemSpec.create(alpha, f"{a!r} + {b!r}*sin({k}*t)", f"{c!r}*cos(t) + {d!r}*t",
                                  float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)))
        lam = complex(rng.uniform(-30, 30), rng.uniform(-3, 3))
        worst_disc = max(worst_disc, delta(spec, lam).discrepancy)
        worst_drift = max(worst_drift, wronskian_drift(spec, lam)[1])
    detail.update(discrepancy=worst_disc, drift=worst_drift, seconds=clock.elapsed)
    assert worst_disc < 1e-7 and worst_drift < 1e-7 and clock.within()


@pytest.mark.acceptance(4, "closed-form spectrum for constant q")
def test_closed_form_spectrum(detail):
    clock = Clock(60.0)
    s = find_eigenvalues(CONSTANT_Q, 50)
    n = np.arange(1, 51)
    exact = np.sqrt(n * n + 0.1)
    err = max(np.max(np.abs(s.positive - exact)), np.max(np.abs(s.negative + exact)))
    pair = sorted(s.zero_pair, key=lambda z: z.real)
    err0 = max(abs(pair[0] + math.sqrt(0.1)), abs(pair[1] - math.sqrt(0.1)))
    detail.update(eigenvalues=float(err), zero_pair=float(err0), seconds=clock.elapsed)
    assert err < 1e-8 and err0 < 1e-9 and clock.within()


@pytest.mark.acceptance(5, "argument-principle certification")
def test_certification(detail):
    clock = Clock(120.0)
    bad, worst = [], 0.0
    for name, spec in (("test", TEST_SPEC), ("test_a05", TEST_SPEC_HALF), ("graded", GRADED)):
        for N in (5, 20, 50):
            s = find_eigenvalues(spec, N)
            worst = max(worst, abs(s.winding_value - round(s.winding_value)))
            if s.certified_count != 2 * N + 2:
                bad.append(f"{name}:N={N}:{s.certified_count}")
    detail.update(miscounts=len(bad), winding_offset=worst, seconds=clock.elapsed)
    assert not bad and worst < 1e-3 and clock.within(), bad


def _delta_error_slope(spec: ProblemSpec, form: str) -> float:
    """Fitted log-log slope of the expansion error on Gamma_N for |lam| in [20, 200].

    Both sides are scaled by exp(-|Im lam| U), the growth of Delta_0 off the axis.
    """
    k = compute_constants(spec)
    angles = np.linspace(0.0, math.pi, 9)
    radii, errors = [], []
    for N in np.unique(np.geomspace(20, 200, 10).astype(int)):
        R = contour_radius(spec, int(N))
        if not 20 <= R <= 200:
            continue
        lam = R * np.exp(1j * angles)
        scale = np.abs(lam.imag) * spec.U
        pr = propagate(spec, lam)
        numeric = pr.delta_mantissa(spec.h, spec.H) * np.exp(pr.logscale - scale)
        approx = np.array([asymptotic_delta(spec, z, form, k) for z in lam]) * np.exp(-scale)
        radii.append(R)
        errors.append(np.max(np.abs(numeric - approx)))
    return float(np.polyfit(np.log(radii), np.log(errors), 1)[0])


@pytest.mark.acceptance(6, "eigenvalue and Delta asymptotics")
def test_asymptotics(detail):
    clock = Clock(180.0)
    ratios = []
    for spec in (TEST_SPEC, TEST_SPEC_HALF):
        s = find_eigenvalues(spec, 200)
        for roots, guesses in ((s.positive, s.guess_positive), (s.negative, s.guess_negative)):
            n = np.arange(10, 201)
            scaled = n ** 2 * np.abs(roots[9:] - guesses[9:])
            ratios.append(float(np.max(scaled[-len(scaled) // 4:]) / np.median(scaled)))
        ns = np.arange(10, 201)
        # the stored guesses are the asymptotic formula itself
        assert np.allclose(s.guess_positive[9:], eigen_guesses(spec, ns), rtol=0, atol=1e-12)
    slope = _delta_error_slope(TEST_SPEC, "consistent")
    slope_printed = _delta_error_slope(TEST_SPEC, "printed")
    detail.update(quartile_ratio=max(ratios), slope=slope, slope_printed_pairing=slope_printed,
                  seconds=clock.elapsed)
    assert max(ratios) <= 10 and slope <= -1.7 and clock.within()


@pytest.mark.acceptance(7, "contour identities")
def test_contour_identities(detail):
    clock = Clock(120.0)
    worst = 0.0
    for spec in (CONSTANT_Q, TEST_SPEC, GRADED):
        for moment in (1, 2):
            worst = max(worst, contour_identity(spec, 10, moment).difference)
    detail.update(difference=worst, seconds=clock.elapsed)
    assert worst < 1e-5 and clock.within()


@pytest.mark.acceptance(8, "first trace formula")
def test_first_trace(detail):
    clock = Clock(300.0)
    symmetric = max(abs(trace1_sides(ProblemSpec.create(1.0, "0", q), 500).residual) for q in ("0", "0.1"))
    spectrum = find_eigenvalues(TEST_SPEC, 2000)
    r500 = trace1_sides(TEST_SPEC, 500, spectrum=spectrum)
    r2000 = trace1_sides(TEST_SPEC, 2000, spectrum=spectrum)
    drift = abs(r2000.residual - r500.residual)
    detail.update(symmetric=symmetric, drift=drift, convergence_delta=r2000.convergence_delta,
                  residual=r2000.residual, seconds=clock.elapsed)
    assert symmetric < 1e-6 and drift < 1e-5 and r2000.convergence_delta < 1e-4 and clock.within()


def _constant_q_exact_lhs(N: int) -> float:
    """Trace-2 left side from lam_n = sign(n) sqrt(n^2 + q) with q = 0.1, p = 0, alpha = 1.

    With p = 0 no shift applies, c1 = q pi / 2 and every C_n vanishes.
    """
    q = 0.1
    c1 = q * math.pi / 2
    w = 2 / math.pi
    n = np.arange(1, N + 1, dtype=float)
    head = 2 * q
    terms = 2 * (n * n + q) - 2 * n * n - 2 * w * c1
    return PartialSumSeries.build(head, terms).extrapolated


def _constant_q_symbolic_rhs() -> float:
    # printed right side 2 alpha c1~ / pi^alpha + (2 alpha / pi^alpha) B~(0) + 2 c2~ for p = 0, q = 1/10
    q = sp.Rational(1, 10)
    t = sp.symbols("t")
    c1 = sp.integrate(q, (t, 0, sp.pi)) / 2
    B0 = sp.integrate(q, (t, 0, sp.pi)) / 2
    c2 = sp.integrate(q, (t, 0, sp.pi)) ** 2 / 8
    return float(2 * c1 / sp.pi + 2 / sp.pi * B0 + 2 * c2)


@pytest.mark.acceptance(9, "second trace formula")
def test_second_trace(detail):
    clock = Clock(300.0)
    rhs_exact = _constant_q_symbolic_rhs()
    reports = {N: trace2_sides(CONSTANT_Q, N) for N in (250, 1000)}
    lhs_err = max(abs(r.lhs - _constant_q_exact_lhs(N)) for N, r in reports.items())
    rhs_err = max(abs(r.rhs - rhs_exact) for r in reports.values())
    expected_residual = _constant_q_exact_lhs(1000) - rhs_exact
    reproduce = max(abs(r.residual - expected_residual) for r in reports.values())
    stability = abs(reports[1000].residual - reports[250].residual)
    detail.update(lhs_error=lhs_err, rhs_error=rhs_err, residual=reports[1000].residual,
                  reproduce=reproduce, stability=stability, seconds=clock.elapsed)
    assert lhs_err < 1e-6 and rhs_err < 1e-8 and reproduce < 1e-6 and stability < 1e-6 and clock.within()


@pytest.mark.acceptance(10, "divergence flag in literal shift mode")
def test_divergence_flag(detail):
    clock = Clock(60.0)
    r = trace1_sides(ProblemSpec.create(0.5, "1", "0"), 64, mode="literal-paper")
    flagged = any(f.startswith("divergence") for f in r.flags)
    tail = float(np.mean(r.series.terms[-8:]))
    detail.update(flagged=flagged, tail_mean=tail, seconds=clock.elapsed)
    assert flagged and abs(tail) > 0.1 and clock.within()


@pytest.mark.acceptance(11, "CLI determinism on audit-all")
def test_cli_determinism(tmp_path, detail):
    clock = Clock(600.0)
    config = tmp_path / "audit.json"
    config.write_text(json.dumps({"alpha": 1.0, "p": "0.2*sin(t)", "q": "cos(t)", "h": 0.3, "H": 0.3,
                                  "N": 500, "mode": "audit-all"}), encoding="utf-8")
    runs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        subprocess.run([sys.executable, "-m", "cfdo.cli", "run", "--config", str(config), "--out", str(out)],
                       check=True, capture_output=True)
        runs.append(out)
    names = sorted(p.name for p in runs[0].iterdir() if p.suffix in (".csv", ".json"))
    differing = [n for n in names if (runs[0] / n).read_bytes() != (runs[1] / n).read_bytes()]
    detail.update(artifacts=len(names), differing=len(differing), seconds=clock.elapsed)
    assert names and not differing and clock.within(), differing
