"""Both sides of the two regularized trace formulas, and the contour identities behind them.

Left sides are partial sums over computed eigenvalues, with the oscillatory
counterterms B_n and C_n subtracted; right sides are closed-form
expressions evaluated by quadrature.  The partial sums are extrapolated to
N -> infinity with the model S_N = L + a/N.

Shift conventions: ``"mean-shift"`` subtracts the d_alpha-mean
gamma = alpha c0 / pi**alpha of p, which makes the shifted p integrate to
zero; ``"literal-paper"`` subtracts c0 itself.  In both modes the counterterms
come from the shifted problem, whose eigenvalues are lam_n - shift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .problem import (
    BC_sequences,
    B_derivative_at_zero,
    C_from_B,
    PencilConstants,
    ProblemSpec,
    SequenceFrequency,
    ShiftMode,
    coefficient_functions,
    compute_constants,
    integrate_u,
    power_1a,
    qp2_integral,
    shift_constant,
    shift_problem,
    shifted_c2,
    UndefinedConstantError,
)
from .propagator import propagate
from .spectrum import Spectrum, contour_radius, contour_steps, find_eigenvalues

MIN_PARTIALS = 8
# bracket terms whose block maxima decay slower than n**-1 are flagged
DIVERGENCE_SLOPE = -1.0
# terms below this fraction of the cancelled magnitude are root-precision noise
NOISE_FRACTION = 1e-11
CONTOUR_NODES_PER_INDEX = 128
CONTOUR_TOL = 1e-7


class CertificationError(RuntimeError):
    """The spectrum handed to the harness is not certified complete."""


class BranchError(RuntimeError):
    """The logarithm of Delta / Delta_0 could not be followed continuously."""


# ---------------------------------------------------------------------------
# partial sums and tail extrapolation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TailFit:
    """Least-squares fit S_n = limit + slope / n over the last half of the partial sums."""

    limit: float
    slope: float
    rms: float
    accepted: bool


def fit_tail(ns, sums) -> TailFit:
    """Fit S_n = L + a/n on the last half of (ns, sums).

    The fit is rejected in favour of the last partial sum when its rms
    residual exceeds the correction |L - S_N| it proposes.
    """
    ns = np.asarray(ns, dtype=float)
    sums = np.asarray(sums, dtype=float)
    if len(ns) < MIN_PARTIALS:
        raise ValueError(f"tail extrapolation needs at least {MIN_PARTIALS} partial sums, got {len(ns)}")
    half = len(ns) // 2
    x, y = 1.0 / ns[half:], sums[half:]
    design = np.column_stack([np.ones_like(x), x])
    (L, a), *_ = np.linalg.lstsq(design, y, rcond=None)
    rms = float(np.sqrt(np.mean((design @ np.array([L, a]) - y) ** 2)))
    last = float(sums[-1])
    if rms <= abs(L - last):
        return TailFit(float(L), float(a), rms, True)
    return TailFit(last, 0.0, rms, False)


@dataclass(frozen=True)
class PartialSumSeries:
    """head + sum of bracket terms n = 1..N, with prefix sums and a tail model.

    ``partials[k]`` is S_{k+1} = head + terms[0] + ... + terms[k], each prefix
    summed with :func:`math.fsum` in ascending n.
    """

    head: float
    terms: np.ndarray
    partials: np.ndarray
    extrapolated: float
    tail_model: tuple[float, float]

    @classmethod
    def build(cls, head: float, terms) -> "PartialSumSeries":
        terms = np.asarray(terms, dtype=float)
        values = [float(head)] + terms.tolist()
        partials = np.array([math.fsum(values[:n + 1]) for n in range(1, len(values))])
        fit = fit_tail(np.arange(1, len(partials) + 1), partials)
        return cls(float(head), terms, partials, fit.limit, (fit.slope, fit.limit))

    @property
    def N(self) -> int:
        return len(self.terms)

    def limit_at(self, n: int) -> float:
        """Extrapolated limit using the first n partial sums only."""
        return fit_tail(np.arange(1, n + 1), self.partials[:n]).limit

    @property
    def convergence_delta(self) -> float:
        """|L(N) - L(N/4)|, the change of the extrapolated limit under a 4x refinement."""
        quarter = max(MIN_PARTIALS, self.N // 4)
        return abs(self.extrapolated - self.limit_at(quarter))

    def decay_slope(self) -> float:
        """Log-log slope of block maxima of |term_n| over the last half of the indices."""
        N = self.N
        tail = np.abs(self.terms[N // 2:])
        ns = np.arange(N // 2 + 1, N + 1)
        blocks = max(2, min(8, len(tail) // 4))
        edges = np.linspace(0, len(tail), blocks + 1).astype(int)
        peak = np.array([tail[a:b].max() for a, b in zip(edges[:-1], edges[1:])])
        centre = np.array([ns[a:b].mean() for a, b in zip(edges[:-1], edges[1:])])
        if np.any(peak <= 0.0):
            return -math.inf
        return float(np.polyfit(np.log(centre), np.log(peak), 1)[0])

    def diverges(self, scale: float = 1.0) -> bool:
        """True when the bracket terms do not decay at least like 1/n.

        ``scale`` is the magnitude of the quantities cancelled inside each
        term; terms below NOISE_FRACTION * scale are treated as round-off.
        """
        if self.N < MIN_PARTIALS:
            return False
        last = float(np.max(np.abs(self.terms[-max(1, self.N // 8):])))
        return last > NOISE_FRACTION * max(1.0, scale) and self.decay_slope() > DIVERGENCE_SLOPE


def extrapolate_tail(partials) -> float:
    """Limit of the partial sums S_1, S_2, ... (or of a PartialSumSeries)."""
    if isinstance(partials, PartialSumSeries):
        return partials.extrapolated
    sums = np.asarray(partials, dtype=float)
    return fit_tail(np.arange(1, len(sums) + 1), sums).limit


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceReport:
    """Both sides of one trace formula at truncation N.

    ``variants`` maps the name of an alternative reading to its
    (lhs, rhs, residual); the headline numbers use the default reading.
    """

    formula: str
    shift_mode: str
    N: int
    lhs: float
    rhs: float
    residual: float
    convergence_delta: float
    flags: tuple[str, ...]
    constants: dict
    shift: float
    series: PartialSumSeries
    variants: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "formula": self.formula,
            "shift_mode": self.shift_mode,
            "N": self.N,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "residual": self.residual,
            "convergence_delta": self.convergence_delta,
            "flags": list(self.flags),
            "constants": dict(self.constants),
            "shift": self.shift,
            "head": self.series.head,
            "partial_sum": float(self.series.partials[-1]),
            "tail_model": {"a": self.series.tail_model[0], "L": self.series.tail_model[1]},
            "variants": {k: dict(v) for k, v in self.variants.items()},
        }


def _variant(lhs: float, rhs: float) -> dict:
    return {"lhs": float(lhs), "rhs": float(rhs), "residual": float(lhs - rhs)}


def _prepare(spec: ProblemSpec, N: int, spectrum: Spectrum | None) -> Spectrum:
    if N < MIN_PARTIALS:
        raise ValueError(f"trace formulas need N >= {MIN_PARTIALS}, got {N}")
    if spectrum is None:
        spectrum = find_eigenvalues(spec, N)
    if spectrum.spec != spec:
        raise ValueError("spectrum was computed for a different problem")
    if spectrum.N < N:
        raise ValueError(f"spectrum holds {spectrum.N} indices, {N} requested")
    if spectrum.N > N:
        spectrum = spectrum.truncated(N)
    if spectrum.certified_count != 2 * N + 2:
        raise CertificationError(
            f"spectrum certifies {spectrum.certified_count} roots, expected {2 * N + 2}; refusing to sum")
    return spectrum


def _common_flags(spec: ProblemSpec, spectrum: Spectrum, shifted: ProblemSpec, mode: str) -> list[str]:
    flags = []
    if spec.p_is_constant:
        flags.append("constant-p: p is constant, outside the nonconstant-p hypothesis of the formulas")
    if mode == "literal-paper":
        c0t = float(shifted.Q_u(shifted.U))
        if abs(c0t) > 1e-12:
            flags.append(f"shifted-mean-nonzero: the shifted p integrates to {c0t:.6g}, not 0")
    flags.extend(f"spectrum: {f}" for f in spectrum.flags)
    return flags


def _divergence_flag(series: PartialSumSeries, scale: float) -> list[str]:
    if series.diverges(scale):
        tail = float(np.mean(series.terms[-max(1, series.N // 8):]))
        return [f"divergence: bracket terms do not decay (slope {series.decay_slope():.3g}, "
                f"tail mean {tail:.6g})"]
    return []


def _constants_dict(k: PencilConstants) -> dict:
    return k.as_dict()


def _zero_pair(spectrum: Spectrum) -> tuple[complex, complex]:
    return complex(spectrum.zero_pair[0]), complex(spectrum.zero_pair[1])


# ---------------------------------------------------------------------------
# first trace formula
# ---------------------------------------------------------------------------

def trace1_identity_rhs(shifted: ProblemSpec) -> float:
    """(p(pi) + p(0))/2 + A(0) + (alpha/pi**alpha) B'(0) for a problem whose p has zero mean."""
    A0, _ = coefficient_functions(shifted, 0.0)
    return ((shifted.p_pi + shifted.p_0) / 2 + A0
            + shifted.alpha / math.pi ** shifted.alpha * B_derivative_at_zero(shifted))


def trace1_printed_rhs(spec: ProblemSpec, shift: float) -> float:
    """The printed closed form with weight (1 - 2 t**alpha / alpha) and counterterm ``shift``.

    With u = t**alpha / alpha the weight is 1 - 2u, and d_alpha t = du.
    """
    def integrand(nd):
        w = 1.0 - 2.0 * nd.u
        return -0.5 * w * nd.qp2 * np.sin(2 * nd.Q) + 0.5 * w * nd.dP * np.cos(2 * nd.Q)

    return (spec.p_pi + spec.p_0 - 2 * shift) / 2 + integrate_u(spec, integrand)


def trace1_sides(spec: ProblemSpec, N: int, mode: ShiftMode = "mean-shift",
                 spectrum: Spectrum | None = None,
                 frequency: SequenceFrequency = "spectral") -> TraceReport:
    """Left and right side of the first trace formula (sum of lam_n + lam_-n)."""
    spectrum = _prepare(spec, N, spectrum)
    s = shift_constant(spec, mode)
    shifted, _ = shift_problem(spec, mode)
    k = compute_constants(spec, strict=False)
    a = spec.alpha
    ns = np.arange(1, N + 1, dtype=float)

    zp, zm = _zero_pair(spectrum)
    head = (zp + zm).real - 2 * s
    pair_sums = spectrum.positive + spectrum.negative - 2 * s
    printed_weight = 1.0 / (ns * a * math.pi ** (1 - a))
    B, _ = BC_sequences(shifted, ns, frequency)
    series = PartialSumSeries.build(head, pair_sums - B * printed_weight)

    identity = trace1_identity_rhs(shifted)
    printed = trace1_printed_rhs(spec, s)
    rhs = identity if mode == "mean-shift" else printed
    lhs = series.extrapolated

    variants = {
        "identity_rhs": _variant(lhs, identity),
        "printed_rhs": _variant(lhs, printed),
        # residues of cot(lam U)/lam at mu_n give the weight 1/(n pi)
        "residue_weight": _variant(
            PartialSumSeries.build(head, pair_sums - B / (ns * math.pi)).extrapolated, rhs),
    }
    if frequency == "spectral":
        B_printed, _ = BC_sequences(shifted, ns, "printed")
        variants["printed_frequency"] = _variant(
            PartialSumSeries.build(head, pair_sums - B_printed * printed_weight).extrapolated, rhs)

    flags = _common_flags(spec, spectrum, shifted, mode) + _divergence_flag(series, N * spec.spacing)
    return TraceReport("trace1", mode, N, lhs, rhs, lhs - rhs, series.convergence_delta,
                       tuple(flags), _constants_dict(k), s, series, variants)


# ---------------------------------------------------------------------------
# second trace formula
# ---------------------------------------------------------------------------

def trace2_shifted_rhs(spec: ProblemSpec, mode: ShiftMode = "mean-shift", strict: bool = False) -> float:
    """2 alpha c1/pi**alpha + (2 alpha/pi**alpha) B~(0) + 2 c2~, B~ and c2~ from the shifted problem."""
    shifted, s = shift_problem(spec, mode)
    k = compute_constants(spec, strict=False)
    _, B0 = coefficient_functions(shifted, 0.0)
    w = 2 * spec.alpha / math.pi ** spec.alpha
    return w * k.c1 + w * B0 + 2 * shifted_c2(spec, s, strict=strict)


def trace2_expanded_rhs(spec: ProblemSpec, shift: float, strict: bool = False) -> float:
    """The expanded closed form in terms of the original p, q and Q, with ``shift`` for c0."""
    a = spec.alpha
    w = a / math.pi ** a
    I = qp2_integral(spec)
    osc = integrate_u(spec, lambda nd: nd.qp2 * np.cos(2 * nd.Q) + nd.dP * np.sin(2 * nd.Q))
    pp, p0 = spec.p_pi, spec.p_0
    try:
        powers = (-power_1a(pp - shift, a, "p(pi)-c0") + power_1a(p0 - shift, a, "p(0)-c0")
                  - power_1a(pp - p0, a, "p(pi)-p(0)") / (2 * (1 + a)))
    except UndefinedConstantError:
        if strict:
            raise
        return math.nan
    return (2 * w * (spec.h + spec.H + 0.5 * I) + w * osc + (pp - shift) * (pp - p0) + powers
            + 2 * spec.h * spec.H + (spec.h + spec.H) * I + 0.25 * I * I)


def trace2_sides(spec: ProblemSpec, N: int, mode: ShiftMode = "mean-shift",
                 spectrum: Spectrum | None = None,
                 frequency: SequenceFrequency = "spectral") -> TraceReport:
    """Left and right side of the second trace formula (sum of squares)."""
    spectrum = _prepare(spec, N, spectrum)
    s = shift_constant(spec, mode)
    shifted, _ = shift_problem(spec, mode)
    k = compute_constants(spec, strict=False)
    a = spec.alpha
    w = 2 * a / math.pi ** a
    ns = np.arange(1, N + 1, dtype=float)
    mu = ns * spec.spacing

    zp, zm = _zero_pair(spectrum)
    head = ((zp - s) ** 2 + (zm - s) ** 2).real
    squares = ((spectrum.positive - s) ** 2 - mu ** 2) + ((spectrum.negative - s) ** 2 - mu ** 2)
    _, C = BC_sequences(shifted, ns, frequency)
    series = PartialSumSeries.build(head, squares - 2 * w * k.c1 - w * C)

    rhs = trace2_shifted_rhs(spec, mode)
    expanded = trace2_expanded_rhs(spec, s)
    lhs = series.extrapolated
    _, B0 = coefficient_functions(shifted, 0.0)
    # reading that also sums the n = 0 bracket, with C_0 = 2 B~(0)
    n0_bracket = head - 2 * w * k.c1 - w * 2 * B0

    variants = {
        "expanded_rhs": _variant(lhs, expanded),
        "n0_bracket": _variant(lhs + n0_bracket, rhs),
    }
    C_sum = C_from_B(shifted, ns, frequency)
    variants["identity_C"] = _variant(
        PartialSumSeries.build(head, squares - 2 * w * k.c1 - w * C_sum).extrapolated, rhs)
    if frequency == "spectral":
        _, C_printed = BC_sequences(shifted, ns, "printed")
        variants["printed_frequency"] = _variant(
            PartialSumSeries.build(head, squares - 2 * w * k.c1 - w * C_printed).extrapolated, rhs)

    flags = _common_flags(spec, spectrum, shifted, mode) + _divergence_flag(series, (N * spec.spacing) ** 2)
    if not math.isfinite(rhs):
        flags.append("undefined-constant: c2~ needs a non-integer power of a negative number")
    return TraceReport("trace2", mode, N, lhs, rhs, lhs - rhs, series.convergence_delta,
                       tuple(flags), _constants_dict(k), s, series, variants)


# ---------------------------------------------------------------------------
# contour identities
# ---------------------------------------------------------------------------

def _log_sin(z: np.ndarray) -> np.ndarray:
    """log sin z without overflow for large |Im z| (any branch; callers unwrap)."""
    z = np.asarray(z, dtype=complex)
    upper = z.imag >= 0
    zu = np.where(upper, z, np.conj(z))
    # sin z = (i/2) e^{-iz} (1 - e^{2iz}) and |e^{2iz}| <= 1 in the upper half plane
    val = np.log(0.5j) - 1j * zu + np.log1p(-np.exp(2j * zu))
    return np.where(upper, val, np.conj(val))


def _log_ratio(spec: ProblemSpec, lam: np.ndarray, n_steps: int) -> np.ndarray:
    """Continuous log(Delta/Delta_0) around the circle through ``lam``."""
    pr = propagate(spec, lam, n_steps=n_steps)
    log_delta = np.log(pr.delta_mantissa(spec.h, spec.H).astype(complex)) + pr.logscale
    log_delta0 = np.log(-lam) + _log_sin(lam * spec.U)
    L = log_delta - log_delta0
    imag = np.unwrap(np.concatenate([L.imag, L.imag[:1]]))
    if np.max(np.abs(np.diff(imag))) > math.pi / 2:
        raise BranchError("phase of Delta/Delta_0 jumps between adjacent contour nodes")
    if abs(imag[-1] - imag[0]) > 1e-6:
        raise BranchError("Delta and Delta_0 have different zero counts inside the contour")
    return L.real + 1j * imag[:-1]


@dataclass(frozen=True)
class ContourIdentity:
    """Contour integral of moment m versus the eigenvalue sum it should equal."""

    moment: int
    N: int
    integral: complex
    eigen_sum: float
    difference: float
    nodes: int


def _roots_inside(spec: ProblemSpec, N: int, radius: float) -> np.ndarray:
    gamma = abs(compute_constants(spec, strict=False).gamma)
    M = N + int(math.ceil(gamma / spec.spacing)) + 2
    roots = find_eigenvalues(spec, M).all_roots()
    return roots[np.abs(roots) < radius]


def contour_identity(spec: ProblemSpec, N: int, moment: int = 1) -> ContourIdentity:
    """Compare -(1/2 pi i) of the integral of m lam**(m-1) log(Delta/Delta_0) around Gamma_N
    with the sum of lam**m over zeros inside minus the same sum over the zeros of Delta_0."""
    if moment not in (1, 2):
        raise ValueError(f"moment must be 1 or 2, got {moment}")
    R = contour_radius(spec, N)
    n_steps = contour_steps(spec, R)
    K = CONTOUR_NODES_PER_INDEX * (N + 1)
    previous = None
    for _ in range(4):
        lam = R * np.exp(2j * np.pi * np.arange(K) / K)
        try:
            L = _log_ratio(spec, lam, n_steps)
        except BranchError:
            K *= 2
            continue
        # d lam = i lam d theta turns the integral into a mean over the nodes
        value = -moment * np.mean(lam ** moment * L)
        half = -moment * np.mean(lam[::2] ** moment * L[::2])
        if abs(value - half) < CONTOUR_TOL * (1 + abs(value)) or (
                previous is not None and abs(value - previous) < CONTOUR_TOL * (1 + abs(value))):
            break
        previous = value
        K *= 2
    else:
        raise BranchError(f"contour integral on |lam| = {R:.6g} did not settle")
    roots = _roots_inside(spec, N, R)
    mu = np.arange(1, N + 1) * spec.spacing
    eigen_sum = math.fsum(np.real(roots ** moment)) - math.fsum(mu ** moment + (-mu) ** moment)
    return ContourIdentity(moment, N, complex(value), eigen_sum, abs(value - eigen_sum), K)


def contour_identity_check(spec: ProblemSpec, N: int, moment: int = 1) -> float:
    """|contour integral - eigenvalue sum| for moment 1 or 2."""
    return contour_identity(spec, N, moment).difference


def cot_contour_check(spec: ProblemSpec, N: int, c: float = 1.0, nodes: int | None = None) -> tuple[complex, float]:
    """(1/2 pi i) of the integral of (c/lam) cot(lam U) around Gamma_N, numerically and by residues.

    The residues come from the partial fractions of cot: zero at lam = 0 (the
    pole there is double with no 1/lam term) and c/(U mu_n) at lam = +-mu_n,
    summed over |n| <= N.
    """
    R = contour_radius(spec, N)
    K = nodes or max(256, CONTOUR_NODES_PER_INDEX * (N + 1))
    lam = R * np.exp(2j * np.pi * np.arange(K) / K)
    z = lam * spec.U
    # cot z = i (e^{2iz} + 1)/(e^{2iz} - 1), written to stay bounded off the real axis
    e = np.exp(2j * np.where(z.imag >= 0, z, -z))
    cot = np.where(z.imag >= 0, 1j * (e + 1) / (e - 1), -1j * (e + 1) / (e - 1))
    numeric = complex(np.mean(c * cot))
    mu = np.arange(1, N + 1) * spec.spacing
    residues = np.concatenate([c / (spec.U * mu), c / (spec.U * -mu)])
    return numeric, math.fsum(residues)
