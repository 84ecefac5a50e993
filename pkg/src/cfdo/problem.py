"""The conformable diffusion pencil and its closed-form ingredients.

A problem is the quintuple (alpha, p, q, h, H) for

    -D^a D^a y + (2 lam p(x) + q(x)) y = lam^2 y,   0 < x < pi,
    D^a y(0) - h y(0) = 0,   D^a y(pi) + H y(pi) = 0.

Everything here is evaluated in u = x**alpha / alpha, where D^a becomes d/du,
the conformable integral becomes an ordinary one over [0, U] with
U = pi**alpha / alpha, and oscillatory phases such as 2 lam t**alpha/alpha
are linear in u.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Literal

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .conformable import CoordinateMap, DomainError, FractionalOrder
from .expr import Expression
from .quadrature import (
    gauss_legendre,
    graded_edges,
    needs_grading,
    oscillation_panels,
    panel_rule,
)

ShiftMode = Literal["mean-shift", "literal-paper"]
SHIFT_MODES = ("mean-shift", "literal-paper")

Q_CACHE_PANELS = 2048
BASE_PANELS = 64
OSC_ORDER = 8


class UndefinedConstantError(ArithmeticError):
    """A non-integer power of a negative number appears in a constant."""

    def __init__(self, term: str, base: float, exponent: float):
        self.term = term
        self.base = base
        self.exponent = exponent
        super().__init__(f"{term} is undefined: ({base:.6g})^{exponent:g} has no real value")


def power_1a(base: float, alpha: float, term: str) -> float:
    """``base ** (1 + alpha)``, refusing negative bases with non-integer exponent."""
    exponent = 1.0 + alpha
    if base < 0.0 and exponent != round(exponent):
        raise UndefinedConstantError(term, base, exponent)
    return float(base) ** exponent


def _as_expression(value) -> Expression:
    if isinstance(value, Expression):
        return value
    if isinstance(value, (int, float)):
        return Expression.from_source(repr(float(value)))
    return Expression.from_source(str(value))


@dataclass(frozen=True)
class ProblemSpec:
    """The operator L_alpha(p, q, h, H).

    ``p`` and ``q`` may be given as expression text, numbers or
    :class:`~cfdo.expr.Expression` objects.
    """

    alpha: float
    p: Expression
    q: Expression
    h: float = 0.0
    H: float = 0.0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "alpha", FractionalOrder(self.alpha))
        object.__setattr__(self, "p", _as_expression(self.p))
        object.__setattr__(self, "q", _as_expression(self.q))
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "H", float(self.H))
        grid = np.linspace(0.0, math.pi, 2001)
        for label, values in (("p", self.p(grid)), ("q", self.q(grid)), ("D^alpha p", self.dp_alpha(grid))):
            if not np.all(np.isfinite(values)):
                bad = grid[~np.isfinite(values)][0]
                raise DomainError(f"{label} is not finite at t={bad:.6g}")

    # -- coordinates -----------------------------------------------------

    @cached_property
    def cmap(self) -> CoordinateMap:
        return CoordinateMap(self.alpha)

    @property
    def U(self) -> float:
        """Length of the transformed interval, pi**alpha / alpha."""
        return self.cmap.U

    @property
    def spacing(self) -> float:
        """Asymptotic eigenvalue spacing alpha / pi**(alpha - 1) = pi / U."""
        return math.pi / self.U

    @property
    def graded(self) -> bool:
        return needs_grading(self.alpha)

    @property
    def p_is_constant(self) -> bool:
        return self.p.is_constant

    def dp_alpha(self, t):
        """D^alpha p(t) = t**(1 - alpha) p'(t), from the symbolic derivative when available."""
        t = np.asarray(t, dtype=float)
        if self.p.derivative is not None:
            d = self.p.deriv(t)
        else:
            h = 1e-6 * np.maximum(1.0, np.abs(t))
            d = (self.p(t - 2 * h) - 8 * self.p(t - h) + 8 * self.p(t + h) - self.p(t + 2 * h)) / (12 * h)
        if self.alpha == 1.0:
            return d
        with np.errstate(invalid="ignore"):
            return np.where(t > 0.0, np.power(t, 1.0 - self.alpha) * d, 0.0)

    def P(self, u):
        """p as a function of u."""
        return self.p(self.cmap.x(u))

    def q_u(self, u):
        return self.q(self.cmap.x(u))

    def dP(self, u):
        """dP/du, which equals D^alpha p at x(u)."""
        return self.dp_alpha(self.cmap.x(u))

    # -- Q cache ---------------------------------------------------------

    @cached_property
    def _q_spline(self) -> CubicHermiteSpline:
        edges = graded_edges(self.U, Q_CACHE_PANELS, self.graded)
        x, w = gauss_legendre(12)
        a = edges[:-1, None]
        width = np.diff(edges)[:, None]
        vals = self.P(a + width * x)
        increments = (vals * (width * w)).sum(axis=1)
        knots_q = np.concatenate(([0.0], np.cumsum(increments)))
        return CubicHermiteSpline(edges, knots_q, self.P(edges))

    def Q_u(self, u):
        """Q as a function of u (integral of P over [0, u])."""
        return self._q_spline(u)

    @property
    def p_pi(self) -> float:
        return float(self.p(math.pi))

    @property
    def p_0(self) -> float:
        return float(self.p(0.0))

    def describe(self) -> str:
        return (f"alpha={self.alpha:g}, p(t)={self.p.source}, q(t)={self.q.source}, "
                f"h={self.h:g}, H={self.H:g}")

    @classmethod
    def create(cls, alpha: float, p="0", q="0", h: float = 0.0, H: float = 0.0, name: str = "") -> "ProblemSpec":
        return cls(alpha, p, q, h, H, name)


# ---------------------------------------------------------------------------
# quadrature rules attached to a problem
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NodeData:
    """Composite rule on [0, U] with the problem data sampled at its nodes."""

    u: np.ndarray
    w: np.ndarray
    P: np.ndarray
    qp2: np.ndarray  # q + p**2
    dP: np.ndarray
    Q: np.ndarray


@lru_cache(maxsize=64)
def node_data(spec: ProblemSpec, n_panels: int, order: int = OSC_ORDER) -> NodeData:
    u, w = panel_rule(graded_edges(spec.U, n_panels, spec.graded), order)
    P = spec.P(u)
    return NodeData(u, w, P, spec.q_u(u) + P * P, spec.dP(u), spec.Q_u(u))


def _panels_for(spec: ProblemSpec, omega: float) -> int:
    """Panel count for phases growing like omega * u on top of the 2Q(u) drift."""
    pmax = float(np.max(np.abs(node_data(spec, BASE_PANELS).P)))
    n = oscillation_panels(abs(omega) + 2.0 * pmax, spec.U, minimum=BASE_PANELS)
    # round up to a power of two so rules are shared between nearby frequencies
    return 1 << int(math.ceil(math.log2(n)))


def accumulated_Q(spec: ProblemSpec, x) -> float:
    """Q(x), the conformable integral of p over [0, x]."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0) or np.any(x > math.pi * (1 + 1e-14)):
        raise DomainError("Q(x) is defined for 0 <= x <= pi")
    val = spec.Q_u(spec.cmap.u(x))
    return float(val) if val.ndim == 0 else val


def integrate_u(spec: ProblemSpec, values_fn, n_panels: int = BASE_PANELS) -> float:
    """Integral over [0, U] of ``values_fn(NodeData)``."""
    nd = node_data(spec, n_panels, 16)
    return float(np.dot(nd.w, values_fn(nd)))


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PencilConstants:
    """c0..c3, the shift constant gamma = alpha c0 / pi**alpha, and U.

    ``undefined`` names constants that could not be evaluated (set to NaN)
    when :func:`compute_constants` runs with ``strict=False``.
    """

    c0: float
    c1: float
    c2: float
    c3: float
    gamma: float
    U: float
    undefined: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {"c0": self.c0, "c1": self.c1, "c2": self.c2, "c3": self.c3, "gamma": self.gamma}


def qp2_integral(spec: ProblemSpec) -> float:
    """Integral of q + p**2 against d_alpha t over [0, pi]."""
    return integrate_u(spec, lambda nd: nd.qp2)


def compute_constants(spec: ProblemSpec, strict: bool = True) -> PencilConstants:
    """Evaluate c0, c1, c2, c3 as printed, plus gamma."""
    a = spec.alpha
    I = qp2_integral(spec)
    c0 = float(spec.Q_u(spec.U))
    c1 = spec.h + spec.H + 0.5 * I
    pp, p0 = spec.p_pi, spec.p_0
    undefined = []
    try:
        c2 = (pp * (pp - p0) / 2
              - (power_1a(pp, a, "c2: p(pi)^(1+alpha)") - power_1a(p0, a, "c2: p(0)^(1+alpha)")) / 2
              - power_1a(pp - p0, a, "c2: (p(pi)-p(0))^(1+alpha)") / (4 * (1 + a))
              + spec.h * spec.H + (spec.h + spec.H) / 2 * I + I * I / 8)
    except UndefinedConstantError:
        if strict:
            raise
        c2 = math.nan
        undefined.append("c2")
    c3 = ((spec.H - spec.h) * (pp - p0) / 2
          + 0.25 * integrate_u(spec, lambda nd: nd.qp2 * (2 * nd.P - pp - p0)))
    return PencilConstants(c0, c1, c2, c3, a * c0 / math.pi ** a, spec.U, tuple(undefined))


def shift_constant(spec: ProblemSpec, mode: ShiftMode = "mean-shift") -> float:
    c0 = float(spec.Q_u(spec.U))
    if mode == "mean-shift":
        return spec.alpha * c0 / math.pi ** spec.alpha
    if mode == "literal-paper":
        return c0
    raise ValueError(f"unknown shift mode {mode!r}; expected one of {SHIFT_MODES}")


def shift_problem(spec: ProblemSpec, mode: ShiftMode = "mean-shift") -> tuple[ProblemSpec, float]:
    """Rewrite the pencil around lam - s: p -> p - s, q -> q + 2 s p - s**2.

    Eigenvalues of the returned problem are those of ``spec`` minus ``s``.
    """
    s = shift_constant(spec, mode)
    if s == 0.0:
        return spec, 0.0
    ps, qs = spec.p.source, spec.q.source
    p_new = f"({ps}) - ({s!r})"
    q_new = f"({qs}) + {2 * s!r}*({ps}) - ({s * s!r})"
    return ProblemSpec(spec.alpha, p_new, q_new, spec.h, spec.H, name=spec.name), s


# ---------------------------------------------------------------------------
# oscillatory coefficient functions
# ---------------------------------------------------------------------------

def _coefficient_arrays(spec: ProblemSpec, lams: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    A = np.empty(lams.shape)
    B = np.empty(lams.shape)
    for i, lam in enumerate(lams):
        nd = node_data(spec, _panels_for(spec, 2 * lam))
        phase = 2 * lam * nd.u - 2 * nd.Q
        s, c = np.sin(phase), np.cos(phase)
        A[i] = 0.5 * np.dot(nd.w, nd.qp2 * s + nd.dP * c)
        B[i] = 0.5 * np.dot(nd.w, nd.qp2 * c - nd.dP * s)
    return A, B


def coefficient_functions(spec: ProblemSpec, lam: float) -> tuple[float, float]:
    """(A(lam), B(lam)), the oscillatory integrals in the expansion of Delta/Delta_0."""
    A, B = _coefficient_arrays(spec, np.array([lam]))
    return float(A[0]), float(B[0])


def B_derivative_at_zero(spec: ProblemSpec, eps: float = 1e-5) -> float:
    """dB/dlam at 0 by a central difference."""
    _, B = _coefficient_arrays(spec, np.array([eps, -eps]))
    return float((B[0] - B[1]) / (2 * eps))


@dataclass(frozen=True)
class CoefficientSeqTerm:
    n: int
    A_n: float
    B_n: float
    C_n: float


SequenceFrequency = Literal["spectral", "printed"]
SEQUENCE_FREQUENCIES = ("spectral", "printed")


def sequence_frequency(spec: ProblemSpec, n, frequency: SequenceFrequency = "spectral") -> np.ndarray:
    """Argument at which B_n and C_n sample B.

    ``"spectral"`` is mu_n = n alpha / pi**(alpha - 1), the location of the
    n-th zero of lam sin(lam U), where the residues of cot(lam U) sit.
    ``"printed"`` is n alpha**2 / pi**(2 alpha - 1) = mu_n / U, which differs
    from mu_n by the factor U even at alpha = 1.
    """
    n = np.asarray(n, dtype=float)
    if frequency == "spectral":
        return n * spec.spacing
    if frequency == "printed":
        a = spec.alpha
        return n * a * a / math.pi ** (2 * a - 1)
    raise ValueError(f"unknown sequence frequency {frequency!r}; expected one of {SEQUENCE_FREQUENCIES}")


def A_sequence(spec: ProblemSpec, ns) -> np.ndarray:
    """A_n for integer n (negative n allowed: same formula evaluated at -n)."""
    ns = np.atleast_1d(np.asarray(ns, dtype=float))
    gamma = shift_constant(spec, "mean-shift")
    out = np.empty(ns.shape)
    for i, n in enumerate(ns):
        freq = n * spec.spacing + gamma
        nd = node_data(spec, _panels_for(spec, 2 * freq))
        phase = 2 * freq * nd.u - 2 * nd.Q
        out[i] = 0.5 * np.dot(nd.w, nd.qp2 * np.cos(phase) - nd.dP * np.sin(phase))
    return out


def BC_sequences(spec: ProblemSpec, ns, frequency: SequenceFrequency = "spectral") -> tuple[np.ndarray, np.ndarray]:
    """B_n and C_n for an array of n, with the weights sin 2Q and cos 2Q."""
    ns = np.atleast_1d(np.asarray(ns, dtype=float))
    B = np.empty(ns.shape)
    C = np.empty(ns.shape)
    nus = sequence_frequency(spec, ns, frequency)
    for i, nu in enumerate(nus):
        nd = node_data(spec, _panels_for(spec, 2 * nu))
        s2, c2 = np.sin(2 * nd.Q), np.cos(2 * nd.Q)
        sw, cw = np.sin(2 * nu * nd.u), np.cos(2 * nu * nd.u)
        B[i] = np.dot(nd.w, nd.qp2 * sw * s2 - nd.dP * sw * c2)
        C[i] = np.dot(nd.w, nd.qp2 * cw * c2 - nd.dP * cw * s2)
    return B, C


def C_from_B(spec: ProblemSpec, ns, frequency: SequenceFrequency = "spectral") -> np.ndarray:
    """B(nu) + B(-nu) at the sampling frequency of each n.

    Expanding the sum gives the C_n integrand with +D^alpha p cos(2 nu u) sin 2Q
    where the printed C_n has a minus sign; the two agree when p is constant.
    """
    nus = sequence_frequency(spec, np.atleast_1d(np.asarray(ns, dtype=float)), frequency)
    _, bp = _coefficient_arrays(spec, nus)
    _, bm = _coefficient_arrays(spec, -nus)
    return bp + bm


def sequence_terms(spec: ProblemSpec, n: int, frequency: SequenceFrequency = "spectral") -> CoefficientSeqTerm:
    """A_n, B_n and C_n for one index n >= 1."""
    if n < 1:
        raise ValueError(f"sequence index must be >= 1, got {n}")
    (A,) = A_sequence(spec, [n])
    (B,), (C,) = BC_sequences(spec, [n], frequency)
    return CoefficientSeqTerm(int(n), float(A), float(B), float(C))


def sequence_identity_residuals(spec: ProblemSpec, n: int,
                                frequency: SequenceFrequency = "spectral") -> tuple[float, float]:
    """|B_n - (B(nu) - B(-nu))| and |C_n - (B(nu) + B(-nu))| at the sampling frequency nu."""
    term = sequence_terms(spec, n, frequency)
    nu = float(sequence_frequency(spec, n, frequency))
    _, (bp, bm) = _coefficient_arrays(spec, np.array([nu, -nu]))
    return abs(term.B_n - (bp - bm)), abs(term.C_n - (bp + bm))


def shifted_c2(spec: ProblemSpec, shift: float, strict: bool = True) -> float:
    """The tilde c2 constant of the problem shifted by ``shift``.

    Evaluated from the list as printed: with p~ = p - s and
    I~ = integral of q~ + p~^2 = integral of q + p^2 (the shift cancels),
    c2~ = p~(pi)(p~(pi) - p~(0))/2 - (p~(pi)^(1+a) + p~(0)^(1+a))/2
          - (p~(pi) - p~(0))^(1+a) / (4(1+a)) + hH + (h+H) I~/2 + I~^2/8.
    The sum of the two powers (where the untilded c2 has a difference) is
    kept as printed.
    """
    a = spec.alpha
    I = qp2_integral(spec)
    pp, p0 = spec.p_pi - shift, spec.p_0 - shift
    try:
        return (pp * (pp - p0) / 2
                - (power_1a(pp, a, "c2~: p~(pi)^(1+alpha)") + power_1a(p0, a, "c2~: p~(0)^(1+alpha)")) / 2
                - power_1a(pp - p0, a, "c2~: (p~(pi)-p~(0))^(1+alpha)") / (4 * (1 + a))
                + spec.h * spec.H + (spec.h + spec.H) / 2 * I + I * I / 8)
    except UndefinedConstantError:
        if strict:
            raise
        return math.nan


# ---------------------------------------------------------------------------
# asymptotics
# ---------------------------------------------------------------------------

def eigen_guess(spec: ProblemSpec, n: int, constants: PencilConstants | None = None) -> float:
    """Leading asymptotic terms of lam_n."""
    return float(eigen_guesses(spec, np.array([n]), constants)[0])


def eigen_guesses(spec: ProblemSpec, ns, constants: PencilConstants | None = None,
                  with_A: bool = True) -> np.ndarray:
    ns = np.atleast_1d(np.asarray(ns, dtype=int))
    k = constants or compute_constants(spec, strict=False)
    out = ns * spec.spacing + k.gamma
    nz = ns != 0
    if np.any(nz):
        A = A_sequence(spec, ns[nz]) if with_A else 0.0
        out = out.astype(float)
        out[nz] += (k.c1 + A) / (ns[nz] * math.pi)
    return out.astype(float)


AsymptoticForm = Literal["printed", "consistent"]


def asymptotic_delta(spec: ProblemSpec, lam: complex, form: AsymptoticForm = "printed",
                     constants: PencilConstants | None = None) -> complex:
    """Five-term large-|lam| expansion of the characteristic function.

    ``form="printed"`` pairs (q + p^2) with sin and D^a p with cos in the two
    oscillatory integrals.  ``form="consistent"`` swaps them (cos and sin),
    which is the pairing implied by the A(lam), B(lam) decomposition of
    Delta / Delta_0 and is the one whose error decays like 1/lam**2.
    """
    lam = complex(lam)
    if lam == 0:
        raise DomainError("asymptotic expansion needs lam != 0")
    k = constants or compute_constants(spec)
    if not math.isfinite(k.c2):
        raise UndefinedConstantError("c2", math.nan, 1 + spec.alpha)
    theta = lam * spec.U - k.c0
    nd = node_data(spec, _panels_for(spec, 2 * abs(lam)))
    psi = lam * (spec.U - 2 * nd.u) - k.c0 + 2 * nd.Q
    if form == "printed":
        osc = 0.5 * np.dot(nd.w, nd.qp2 * np.sin(psi) + nd.dP * np.cos(psi))
    elif form == "consistent":
        osc = 0.5 * np.dot(nd.w, nd.qp2 * np.cos(psi) + nd.dP * np.sin(psi))
    else:
        raise ValueError(f"unknown form {form!r}")
    s, c = np.sin(theta), np.cos(theta)
    return complex(-lam * s + (spec.p_pi + spec.p_0) / 2 * s + k.c1 * c
                   + k.c2 / lam * s + k.c3 / lam * c + osc)


def delta0(spec: ProblemSpec, lam):
    """-lam sin(lam U), the characteristic function for p = q = h = H = 0."""
    return -lam * np.sin(lam * spec.U)
