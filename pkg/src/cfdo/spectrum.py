"""Eigenvalues of the pencil: real-axis root finding certified by the argument principle.

Roots near the origin are located by a dense scan of Delta on the real axis
(which also catches a double root through a local minimum of |Delta|); the
remaining ones are bracketed around the asymptotic guesses and refined by a
safeguarded secant iteration.  All evaluations of Delta go through the batched
Magnus propagator.

Completeness is certified by the winding number of Delta around the circle
Gamma_N.  The contour work grows like N**2, so the winding number is computed
on Gamma_M with M = min(N, certify_max); eigenvalues beyond that circle are
certified one by one through the sign change that brackets each of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar

from .problem import ProblemSpec, compute_constants, eigen_guesses
from .propagator import STEPS_PER_PHASE, magnus_steps, propagate
from .quadrature import AccuracyError

ROOT_RTOL = 1e-11
CERTIFY_MAX = 100
SCAN_DENSITY = 64
MAX_EXPANSIONS = 4
MAX_DOUBLINGS = 3
STENCIL_STEP = 1e-6


class SearchError(RuntimeError):
    """A root could not be bracketed or refined."""


class CompletenessError(RuntimeError):
    """The stored roots disagree with the argument-principle count."""


# ---------------------------------------------------------------------------
# contours and winding numbers
# ---------------------------------------------------------------------------

def contour_radius(spec: ProblemSpec, N: int) -> float:
    """Radius of Gamma_N, (alpha / pi**(alpha - 1)) (N + 1/2)."""
    if N < 0:
        raise ValueError(f"contour index must be >= 0, got {N}")
    return spec.alpha / math.pi ** (spec.alpha - 1.0) * (N + 0.5)


@dataclass(frozen=True)
class ContourSpec:
    """Circle of radius ``radius`` about 0 sampled at ``nodes`` equispaced points."""

    N: int
    radius: float
    nodes: int

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("contour radius must be positive")
        if self.nodes < max(64, 16 * (self.N + 1)):
            raise ValueError(f"contour needs at least {max(64, 16 * (self.N + 1))} nodes, got {self.nodes}")

    @classmethod
    def for_index(cls, spec: ProblemSpec, N: int, nodes: int | None = None, radius: float | None = None) -> "ContourSpec":
        return cls(N, radius if radius is not None else contour_radius(spec, N),
                   nodes if nodes is not None else max(64, 16 * (N + 1)))

    def points(self) -> np.ndarray:
        theta = 2.0 * np.pi * np.arange(self.nodes) / self.nodes
        return self.radius * np.exp(1j * theta)


def _log_delta(spec: ProblemSpec, lams: np.ndarray, n_steps: int) -> np.ndarray:
    pr = propagate(spec, lams.astype(complex), n_steps=n_steps)
    return np.log(pr.delta_mantissa(spec.h, spec.H).astype(complex)) + pr.logscale


def contour_steps(spec: ProblemSpec, radius: float) -> int:
    """One Magnus grid for a whole contour so that nearby evaluations stay smooth."""
    return magnus_steps(spec, radius * (1.0 + 2 * STENCIL_STEP) + 1.0, STEPS_PER_PHASE)


def log_derivative_on(spec: ProblemSpec, contour: ContourSpec) -> tuple[np.ndarray, np.ndarray]:
    """(lam_k, Delta'(lam_k)/Delta(lam_k)) at the contour nodes.

    The derivative uses the analytic four-point stencil
    [D(l+e) - D(l-e) - i (D(l+ie) - D(l-ie))] / (4e), e = 1e-6 (1 + |l|),
    whose O(e**2) terms cancel for analytic D.
    """
    lam = contour.points()
    eps = STENCIL_STEP * (1.0 + np.abs(lam))
    pts = np.concatenate([lam, lam + eps, lam - eps, lam + 1j * eps, lam - 1j * eps])
    logs = _log_delta(spec, pts, contour_steps(spec, contour.radius)).reshape(5, -1)
    rel = np.exp(logs[1:] - logs[0])  # D(.)/D(lam), safe against overflow
    ratio = (rel[0] - rel[1] - 1j * (rel[2] - rel[3])) / (4.0 * eps)
    return lam, ratio


@dataclass(frozen=True)
class WindingResult:
    count: int
    value: float
    radius: float
    nodes: int


def winding_number(spec: ProblemSpec, N: int, radius: float | None = None, nodes: int | None = None) -> WindingResult:
    """(1/2 pi i) of the contour integral of Delta'/Delta around Gamma_N, by the trapezoid rule.

    The node count is doubled up to three times until the value is within
    1e-3 of an integer and agrees with the half-resolution value.
    """
    contour = ContourSpec.for_index(spec, N, nodes, radius)
    K = contour.nodes
    for _ in range(MAX_DOUBLINGS + 1):
        lam, ratio = log_derivative_on(spec, ContourSpec(contour.N, contour.radius, K))
        # d lam = i lam d theta, so (1/2 pi i) sum f i lam (2 pi / K) = mean(f lam)
        value = np.mean(ratio * lam)
        half = np.mean(ratio[::2] * lam[::2])
        count = int(round(value.real))
        if abs(value - count) < 1e-3 and abs(value - half) < 1e-3:
            return WindingResult(count, float(value.real), contour.radius, K)
        K *= 2
    raise AccuracyError(f"winding number on |lam|={contour.radius:.6g} is not an integer: {value:.6g}",
                        float(abs(value - round(value.real))))


def count_eigenvalues_inside(spec: ProblemSpec, N: int) -> int:
    """Number of zeros of Delta inside Gamma_N, with multiplicity.

    When a zero sits too close to the circle for the trapezoid rule to settle,
    the radius is nudged by a quarter of the eigenvalue gap either way.
    """
    return _winding_with_nudge(spec, N).count


def _winding_with_nudge(spec: ProblemSpec, N: int) -> WindingResult:
    base = contour_radius(spec, N)
    gap = spec.spacing
    idx = np.array([N - 1, N, N + 1, N + 2])
    near = np.abs(eigen_guesses(spec, np.concatenate([idx[idx > 0], -idx[idx > 0]])))
    # the radius farthest from the expected roots, then the nominal one and two fallbacks
    grid = base + gap * np.linspace(-0.4, 0.4, 33)
    margin = np.min(np.abs(grid[:, None] - near[None, :]), axis=1)
    radii = [float(grid[np.argmax(margin)]), base, base + 0.25 * gap, base - 0.25 * gap]
    last = None
    for r in radii:
        try:
            return winding_number(spec, N, radius=r)
        except AccuracyError as exc:
            last = exc
    raise last


# ---------------------------------------------------------------------------
# real roots
# ---------------------------------------------------------------------------

def _delta_real(spec: ProblemSpec, lams: np.ndarray) -> np.ndarray:
    return propagate(spec, np.asarray(lams, dtype=float)).delta(spec.h, spec.H)


def refine_roots(spec: ProblemSpec, a, b, fa, fb, x0=None, rtol: float = ROOT_RTOL,
                 max_iter: int = 80) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized safeguarded secant iteration on brackets [a, b] with fa * fb < 0.

    Returns (roots, Delta at roots).  Iteration stops once the secant step is
    below rtol * max(1, |lam|); the returned point is one further secant update.
    """
    a, b = np.array(a, dtype=float), np.array(b, dtype=float)
    fa, fb = np.array(fa, dtype=float), np.array(fb, dtype=float)
    if np.any(np.sign(fa) * np.sign(fb) > 0):
        raise SearchError("refine_roots needs sign changes on every bracket")
    # start from the guess when given, else from regula falsi
    c = np.where(fb != fa, b - fb * (b - a) / (fb - fa), 0.5 * (a + b)) if x0 is None else np.array(x0, dtype=float)
    c = np.where((c > a) & (c < b), c, 0.5 * (a + b))
    d = np.where(np.abs(fa) < np.abs(fb), a, b)
    fd = np.where(np.abs(fa) < np.abs(fb), fa, fb)
    fc = _delta_real(spec, c)
    last_step = b - a
    active = np.ones(c.shape, dtype=bool)
    out = c.copy()
    stalls = np.zeros(c.shape, dtype=int)
    for _ in range(max_iter):
        # shrink the bracket with the newest point
        left = np.sign(fc) == np.sign(fa)
        a = np.where(active & left, c, a)
        fa = np.where(active & left, fc, fa)
        b = np.where(active & ~left, c, b)
        fb = np.where(active & ~left, fc, fb)
        with np.errstate(divide="ignore", invalid="ignore"):
            cand = c - fc * (c - d) / (fc - fd)
        ok = np.isfinite(cand) & (cand >= a) & (cand <= b)
        secant = cand
        width = b - a
        # fall back to bisection when secant steps stop contracting
        step = np.abs(cand - c)
        stalls = np.where(ok & (step <= 0.5 * last_step), 0, stalls + 1)
        bisect = ~ok | (stalls >= 2)
        cand = np.where(bisect, 0.5 * (a + b), cand)
        last_step = np.where(active, np.abs(cand - c), last_step)
        tol = rtol * np.maximum(1.0, np.abs(c))
        # a small step only certifies accuracy when the secant pair is close too
        near = np.abs(c - d) < 1e4 * tol
        done = active & ((fc == 0.0) | ((np.abs(cand - c) < tol) & near) | (width < tol))
        with np.errstate(divide="ignore", invalid="ignore"):
            falsi = np.where(fb != fa, b - fb * (b - a) / (fb - fa), 0.5 * (a + b))
        # a bisection midpoint is only tol-accurate; finish with an interpolation step
        best = np.where(fc == 0.0, c, np.where(ok & (width >= tol), secant, falsi))
        out = np.where(done, best, out)
        active &= ~done
        if not np.any(active):
            break
        d, fd = np.where(active, c, d), np.where(active, fc, fd)
        c = np.where(active, cand, c)
        idx = np.flatnonzero(active)
        fc = fc.copy()
        fc[idx] = _delta_real(spec, c[idx])
    if np.any(active):
        bad = np.flatnonzero(active)[0]
        raise SearchError(f"root refinement did not converge near lam={c[bad]:.12g}")
    return out, _delta_real(spec, out)


def scan_real_roots(spec: ProblemSpec, lo: float, hi: float, density: int = SCAN_DENSITY,
                    rtol: float = ROOT_RTOL) -> list[float]:
    """All real zeros of Delta in [lo, hi], with a double zero listed twice.

    Sign changes on a grid of ``density`` points per eigenvalue gap are refined
    as simple roots.  Interior local minima of |Delta| without a sign change are
    examined by minimizing |Delta|: a sign flip at the minimum means two close
    roots, a vanishing minimum means a double root.
    """
    n = int(math.ceil((hi - lo) / spec.spacing * density)) + 1
    x = np.linspace(lo, hi, n)
    f = _delta_real(spec, x)
    s = np.sign(f)
    roots: list[float] = []
    for i in np.flatnonzero(f == 0.0):
        # an exact zero on the grid is double when Delta keeps its sign across it
        touch = 0 < i < n - 1 and s[i - 1] == s[i + 1] != 0
        roots.extend([float(x[i])] * (2 if touch else 1))
    idx = np.flatnonzero(s[:-1] * s[1:] < 0)
    if len(idx):
        r, _ = refine_roots(spec, x[idx], x[idx + 1], f[idx], f[idx + 1], rtol=rtol)
        roots.extend(r.tolist())
    scale = float(np.max(np.abs(f)))
    af = np.abs(f)
    for i in range(1, n - 1):
        if not (af[i] < af[i - 1] and af[i] < af[i + 1] and s[i - 1] == s[i] == s[i + 1] != 0):
            continue
        sign = s[i]
        res = minimize_scalar(lambda t: sign * float(_delta_real(spec, np.array([t]))[0]),
                              bounds=(x[i - 1], x[i + 1]), method="bounded",
                              options={"xatol": 1e-12 * max(1.0, abs(x[i]))})
        xm, fm = float(res.x), sign * float(res.fun)
        if abs(fm) <= 1e-10 * max(1.0, scale):
            roots.extend([xm, xm])
        elif np.sign(fm) != sign:
            r, _ = refine_roots(spec, [x[i - 1], xm], [xm, x[i + 1]], [f[i - 1], fm], [fm, f[i + 1]], rtol=rtol)
            roots.extend(r.tolist())
    return sorted(roots)


# ---------------------------------------------------------------------------
# spectrum
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues lam_n, |n| = 1..N, and the pair continuing the double zero at 0.

    ``positive[k]`` is lam_{k+1} and ``negative[k]`` is lam_{-(k+1)}.
    """

    spec: ProblemSpec
    N: int
    positive: np.ndarray
    negative: np.ndarray
    zero_pair: tuple[complex, complex]
    guess_positive: np.ndarray
    guess_negative: np.ndarray
    residual_positive: np.ndarray
    residual_negative: np.ndarray
    zero_residual: tuple[float, float]
    certified_count: int
    certified_N: int
    winding_value: float
    flags: tuple[str, ...] = field(default=())

    @property
    def entries(self) -> dict[int, float]:
        out = {-(k + 1): float(v) for k, v in enumerate(self.negative)}
        out.update({k + 1: float(v) for k, v in enumerate(self.positive)})
        return dict(sorted(out.items()))

    def lam(self, n: int) -> float:
        if n == 0:
            raise KeyError("index 0 is the zero pair; use zero_pair")
        return float(self.positive[n - 1] if n > 0 else self.negative[-n - 1])

    @property
    def zero_pair_is_real(self) -> bool:
        return all(np.imag(z) == 0 for z in self.zero_pair)

    def all_roots(self) -> np.ndarray:
        """Every stored root, the zero pair between lam_{-1} and lam_1 (complex dtype if it is non-real)."""
        zero = sorted(self.zero_pair, key=lambda z: (np.real(z), np.imag(z)))
        return np.concatenate([self.negative[::-1], np.array(zero), self.positive])

    def rows(self):
        """(n, lam, guess, |Delta(lam)|) rows in increasing lam; the zero pair has n = 0."""
        gamma = float(compute_constants(self.spec, strict=False).gamma)
        out = [(-(k + 1), self.negative[k], self.guess_negative[k], self.residual_negative[k])
               for k in range(self.N - 1, -1, -1)]
        lo, hi = sorted(range(2), key=lambda j: (np.real(self.zero_pair[j]), np.imag(self.zero_pair[j])))
        out += [(0, self.zero_pair[lo], gamma, self.zero_residual[lo]),
                (0, self.zero_pair[hi], gamma, self.zero_residual[hi])]
        out += [(k + 1, self.positive[k], self.guess_positive[k], self.residual_positive[k]) for k in range(self.N)]
        return [(int(n), complex(l) if np.imag(l) else float(np.real(l)), float(g), float(abs(r))) for n, l, g, r in out]

    def truncated(self, N: int) -> "Spectrum":
        if not 1 <= N <= self.N:
            raise ValueError(f"cannot truncate a spectrum of size {self.N} to {N}")
        return Spectrum(self.spec, N, self.positive[:N], self.negative[:N], self.zero_pair,
                        self.guess_positive[:N], self.guess_negative[:N],
                        self.residual_positive[:N], self.residual_negative[:N], self.zero_residual,
                        self.certified_count - 2 * (self.N - N), min(self.certified_N, N),
                        self.winding_value, self.flags)


def _bracket_and_refine(spec: ProblemSpec, guesses: np.ndarray, rtol: float) -> tuple[np.ndarray, np.ndarray]:
    w = np.full(guesses.shape, 0.5 * spec.spacing)
    a, b = guesses - w, guesses + w
    fa, fb = _delta_real(spec, a), _delta_real(spec, b)
    for _ in range(MAX_EXPANSIONS):
        missing = np.flatnonzero(np.sign(fa) * np.sign(fb) > 0)
        if not len(missing):
            break
        w[missing] *= 1.5
        a[missing], b[missing] = guesses[missing] - w[missing], guesses[missing] + w[missing]
        fa[missing] = _delta_real(spec, a[missing])
        fb[missing] = _delta_real(spec, b[missing])
    missing = np.flatnonzero(np.sign(fa) * np.sign(fb) > 0)
    if len(missing):
        g = guesses[missing[0]]
        raise SearchError(f"no sign change of Delta around the guess {g:.10g} after {MAX_EXPANSIONS} expansions")
    return refine_roots(spec, a, b, fa, fb, x0=guesses, rtol=rtol)


def find_eigenvalues(spec: ProblemSpec, N: int, rtol: float = ROOT_RTOL,
                     certify_max: int = CERTIFY_MAX) -> Spectrum:
    """lam_n for 1 <= |n| <= N plus the zero pair, certified against the winding number."""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    return _find_eigenvalues(spec, int(N), float(rtol), int(certify_max))


def complex_zero_pair(spec: ProblemSpec, lo: float, hi: float, tol: float = 1e-13,
                      max_index: int = 50) -> tuple[complex, complex]:
    """The conjugate pair of non-real zeros, given the innermost real roots lo < 0 < hi.

    On the smallest circle Gamma_k holding two more zeros than real roots,
    the contour moments sum(z) and sum(z**2) minus the real roots' share give
    the pair as the roots of a quadratic.  Newton's method with the analytic
    stencil derivative then polishes it.
    """
    z = None
    for k in range(max_index + 1):
        if contour_radius(spec, k) < min(-lo, hi):
            continue
        wind = _winding_with_nudge(spec, k)
        real = np.array(scan_real_roots(spec, -wind.radius, wind.radius))
        if wind.count != len(real) + 2:
            continue
        lam, ratio = log_derivative_on(spec, ContourSpec(k, wind.radius, wind.nodes))
        # mean(f lam^(m+1)) is (1/2 pi i) times the contour integral of lam^m Delta'/Delta
        s1 = np.mean(ratio * lam ** 2) - np.sum(real)
        s2 = np.mean(ratio * lam ** 3) - np.sum(real ** 2)
        pair = np.roots([1.0, -s1, (s1 * s1 - s2) / 2])
        z = complex(pair[np.argmax(np.abs(pair.imag))])
        break
    if z is None:
        raise SearchError(f"no circle up to Gamma_{max_index} encloses a non-real pair beside [{lo:.6g}, {hi:.6g}]")
    z = complex(z.real, abs(z.imag))
    M = magnus_steps(spec, abs(z) + 2.0, STEPS_PER_PHASE)
    for _ in range(60):
        eps = STENCIL_STEP * (1 + abs(z))
        pts = np.array([z, z + eps, z - eps, z + 1j * eps, z - 1j * eps])
        d = propagate(spec, pts, n_steps=M).delta(spec.h, spec.H)
        deriv = (d[1] - d[2] - 1j * (d[3] - d[4])) / (4 * eps)
        step = d[0] / deriv
        z -= step
        if abs(step) < tol * max(1.0, abs(z)):
            break
    else:
        raise SearchError(f"complex root search near {z:.6g} did not converge")
    if abs(z.imag) < 1e-9 * max(1.0, abs(z)):
        raise SearchError(f"expected a non-real zero, Newton converged to the real axis at {z.real:.10g}")
    z = complex(z.real, abs(z.imag))
    return z, z.conjugate()


@lru_cache(maxsize=16)
def _find_eigenvalues(spec: ProblemSpec, N: int, rtol: float, certify_max: int) -> Spectrum:
    consts = compute_constants(spec, strict=False)
    gamma = consts.gamma
    ns = np.arange(1, N + 1)
    g_pos = eigen_guesses(spec, ns, consts)
    g_neg = eigen_guesses(spec, -ns, consts)
    core = min(N, certify_max)
    wind = _winding_with_nudge(spec, core)
    # dense scan of the core window, a little wider than needed for labelling
    half = spec.spacing * (core + 1.5)
    lo, hi = min(gamma - half, -wind.radius), max(gamma + half, wind.radius)
    roots = np.array(scan_real_roots(spec, lo, hi, rtol=rtol))
    real_inside = int(np.sum(np.abs(roots) < wind.radius))
    flags = []
    complex_pair = wind.count == real_inside + 2
    if complex_pair:
        # two zeros are off the real axis: they continue the double zero at 0
        labels = list(range(-core, 0)) + list(range(1, core + 1))
        flags.append("zero pair is a complex-conjugate pair (non-real eigenvalues)")
    else:
        labels = list(range(-core, 0)) + [0, 0] + list(range(1, core + 1))
    targets = np.array([g_neg[-n - 1] if n < 0 else (gamma if n == 0 else g_pos[n - 1]) for n in labels])
    if len(roots) < len(labels):
        raise CompletenessError(
            f"winding number {wind.count} on |lam| = {wind.radius:.6g} but only {len(roots)} real roots "
            f"found in [{lo:.6g}, {hi:.6g}]; expected at least {len(labels)}")
    costs = [np.sum(np.abs(roots[o:o + len(labels)] - targets)) for o in range(len(roots) - len(labels) + 1)]
    o = int(np.argmin(costs))
    chosen = roots[o:o + len(labels)]
    pos = np.empty(N)
    neg = np.empty(N)
    neg[:core] = chosen[:core][::-1]
    if complex_pair:
        pos[:core] = chosen[core:]
        zero = complex_zero_pair(spec, neg[0], pos[0])
    else:
        pos[:core] = chosen[core + 2:]
        zero = (float(chosen[core + 1]), float(chosen[core]))
    if N > core:
        outer = np.concatenate([g_pos[core:], g_neg[core:]])
        r, _ = _bracket_and_refine(spec, outer, rtol)
        pos[core:], neg[core:] = r[:N - core], r[N - core:]
    ordered = np.concatenate([neg[::-1], pos])
    if np.any(np.diff(ordered) <= 0) or not (neg[0] <= min(np.real(zero)) <= max(np.real(zero)) <= pos[0]):
        k = int(np.argmin(np.diff(ordered)))
        raise SearchError(f"eigenvalues out of order near lam={ordered[k]:.10g}")

    # residuals for reporting
    res = np.abs(_delta_real(spec, np.concatenate([pos, neg])))
    r_zero = np.abs(propagate(spec, np.array(zero, dtype=complex)).delta(spec.h, spec.H))
    r_pos, r_neg = res[:N], res[N:]

    # certification: every zero inside the circle must have been found by the scan
    found_inside = real_inside + (2 if complex_pair else 0)
    if found_inside != wind.count:
        raise CompletenessError(
            f"winding number {wind.count} on |lam| = {wind.radius:.6g} but {found_inside} roots found inside; "
            f"a root is missing (possibly non-real) in the window [-{wind.radius:.6g}, {wind.radius:.6g}]")
    stored_inside = int(np.sum(np.abs(ordered) < wind.radius) + np.sum(np.abs(np.array(zero)) < wind.radius))
    # roots inside the circle but beyond index N are certified yet not stored
    outside = 2 * N + 2 - stored_inside
    not_stored = found_inside - stored_inside
    if N > core:
        flags.append(f"contour certification on Gamma_{core}; roots with |n| > {core} certified by bracketing sign changes")
    if wind.radius != contour_radius(spec, core):
        flags.append(f"contour radius nudged to {wind.radius:.12g}")
    return Spectrum(spec, N, pos, neg, zero, g_pos, g_neg, r_pos, r_neg, (float(r_zero[0]), float(r_zero[1])),
                    wind.count + outside - not_stored, core, wind.value, tuple(flags))


@dataclass(frozen=True)
class RealnessReport:
    real_roots: int
    certified_count: int
    min_gap: float

    @property
    def ok(self) -> bool:
        return self.real_roots == self.certified_count and self.min_gap > 1e-6


def realness_check(spectrum: Spectrum, from_index: int = 5) -> RealnessReport:
    """Real roots located versus the certified count, and the smallest gap among |n| >= from_index."""
    real = 2 * spectrum.N + sum(1 for z in spectrum.zero_pair if np.imag(z) == 0)
    tail_pos = spectrum.positive[from_index - 1:]
    tail_neg = spectrum.negative[from_index - 1:]
    gaps = np.concatenate([np.diff(tail_pos), -np.diff(tail_neg)])
    return RealnessReport(real, spectrum.certified_count, float(np.min(gaps)) if len(gaps) else math.inf)


__all__ = [
    "CompletenessError",
    "ContourSpec",
    "RealnessReport",
    "SearchError",
    "Spectrum",
    "WindingResult",
    "contour_radius",
    "count_eigenvalues_inside",
    "find_eigenvalues",
    "log_derivative_on",
    "complex_zero_pair",
    "realness_check",
    "refine_roots",
    "scan_real_roots",
    "winding_number",
]
