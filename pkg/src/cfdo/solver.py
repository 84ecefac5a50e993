"""Shooting solutions phi, psi of the pencil equation and the characteristic function.

Integration runs in u = x**alpha / alpha with an adaptive eighth-order
Dormand-Prince method, where the equation reads

    y''(u) = (2 lam P(u) + q(u) - lam**2) y(u),   D^alpha y = dy/du.

Complex lam is handled by integrating real and imaginary parts as a real
system of size four.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import DOP853

from .conformable import DomainError, PencilState, fractional_wronskian
from .problem import ProblemSpec, power_1a
from .quadrature import gauss_legendre, graded_edges, panel_rule

ODE_RTOL = 1e-10
N_SAMPLES = 257
DISCREPANCY_LIMIT = 1e-7


class IntegrationError(RuntimeError):
    """The adaptive integrator could not continue (step-size collapse)."""

    def __init__(self, message: str, x: float):
        self.x = x
        super().__init__(f"{message} at x={x:.6g}")


class ConsistencyError(RuntimeError):
    """phi-side and psi-side characteristic values disagree."""


@dataclass(frozen=True)
class IntegratorStats:
    steps: int
    rejected_steps: int
    nfev: int
    min_step: float


@dataclass(frozen=True)
class Trajectory:
    """Samples of (y, D^alpha y) along x, in integration order."""

    lam: complex
    states: tuple[PencilState, ...]
    stats: IntegratorStats

    @property
    def x(self) -> np.ndarray:
        return np.array([s.x for s in self.states])

    @property
    def y(self) -> np.ndarray:
        return np.array([s.y for s in self.states])

    @property
    def dy_alpha(self) -> np.ndarray:
        return np.array([s.dy_alpha for s in self.states])

    def at(self, index: int) -> PencilState:
        return self.states[index]


@dataclass(frozen=True)
class CharacteristicValue:
    lam: complex
    delta: complex
    delta_alt: complex
    discrepancy: float


def _pencil_rhs(spec: ProblemSpec, lam: complex):
    lr, li = float(np.real(lam)), float(np.imag(lam))
    c_r, c_i = lr * lr - li * li, 2.0 * lr * li  # lam**2
    if li == 0.0:
        def rhs(u, y):
            f = 2.0 * lr * float(spec.P(u)) + float(spec.q_u(u)) - c_r
            return np.array([y[1], f * y[0]])
        return rhs

    def rhs(u, y):
        P = float(spec.P(u))
        fr = 2.0 * lr * P + float(spec.q_u(u)) - c_r
        fi = 2.0 * li * P - c_i
        return np.array([y[1], fr * y[0] - fi * y[2], y[3], fr * y[2] + fi * y[0]])
    return rhs


def _integrate(spec: ProblemSpec, lam: complex, u0: float, u1: float, y0: complex, dy0: complex,
               samples_u: np.ndarray, rtol: float) -> tuple[np.ndarray, np.ndarray, IntegratorStats]:
    complex_mode = np.imag(lam) != 0.0
    if complex_mode:
        state = np.array([np.real(y0), np.real(dy0), np.imag(y0), np.imag(dy0)], dtype=float)
    else:
        state = np.array([np.real(y0), np.real(dy0)], dtype=float)
    scale = 1.0 + abs(lam)
    solver = DOP853(_pencil_rhs(spec, lam), u0, state, u1, rtol=rtol, atol=rtol * 1e-3,
                    first_step=min(abs(u1 - u0) / 64, 0.5 / scale))
    nfev_start = solver.nfev
    out = np.empty((len(samples_u), len(state)))
    direction = 1.0 if u1 > u0 else -1.0
    k = 0
    # samples exactly at the start
    while k < len(samples_u) and samples_u[k] == u0:
        out[k] = state
        k += 1
    steps = 0
    min_step = math.inf
    while solver.status == "running":
        t_old = solver.t
        msg = solver.step()
        if solver.status == "failed":
            raise IntegrationError(f"integration failed ({msg})", float(spec.cmap.x(abs(t_old))))
        steps += 1
        min_step = min(min_step, abs(solver.t - t_old))
        dense = None
        while k < len(samples_u) and direction * (samples_u[k] - solver.t) <= 0.0:
            if samples_u[k] == solver.t:
                out[k] = solver.y
            else:
                dense = dense or solver.dense_output()
                out[k] = dense(samples_u[k])
            k += 1
    if k < len(samples_u):
        raise IntegrationError("integration stopped early", float(spec.cmap.x(solver.t)))
    # each attempted step costs 12 evaluations; everything beyond accepted steps was rejected
    attempts = (solver.nfev - nfev_start) // 12
    stats = IntegratorStats(steps, max(0, attempts - steps), int(solver.nfev), float(min_step))
    if complex_mode:
        return out[:, 0] + 1j * out[:, 2], out[:, 1] + 1j * out[:, 3], stats
    return out[:, 0], out[:, 1], stats


def _as_value(z, lam):
    return complex(z) if np.iscomplexobj(lam) or isinstance(lam, complex) else float(np.real(z))


def _sample_grid(spec: ProblemSpec, n_samples: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.linspace(0.0, math.pi, n_samples)
    u = spec.cmap.u(x)
    u[-1] = spec.U
    return x, u


def solve_phi(spec: ProblemSpec, lam: complex, rtol: float = ODE_RTOL, n_samples: int = N_SAMPLES) -> Trajectory:
    """phi(x, lam) with phi(0) = 1, D^alpha phi(0) = h, sampled uniformly in x."""
    x, u = _sample_grid(spec, n_samples)
    y, dy, stats = _integrate(spec, lam, 0.0, spec.U, 1.0, spec.h, u, rtol)
    states = tuple(PencilState(float(xi), _as_value(a, lam), _as_value(b, lam)) for xi, a, b in zip(x, y, dy))
    return Trajectory(lam, states, stats)


def solve_psi(spec: ProblemSpec, lam: complex, rtol: float = ODE_RTOL, n_samples: int = N_SAMPLES) -> Trajectory:
    """psi(x, lam) with psi(pi) = 1, D^alpha psi(pi) = -H, sampled from x = pi down to 0."""
    x, u = _sample_grid(spec, n_samples)
    x, u = x[::-1], u[::-1]
    y, dy, stats = _integrate(spec, lam, spec.U, 0.0, 1.0, -spec.H, u, rtol)
    states = tuple(PencilState(float(xi), _as_value(a, lam), _as_value(b, lam)) for xi, a, b in zip(x, y, dy))
    return Trajectory(lam, states, stats)


def delta(spec: ProblemSpec, lam: complex, rtol: float = ODE_RTOL,
          limit: float = DISCREPANCY_LIMIT) -> CharacteristicValue:
    """Delta(lam) from phi at pi, cross-checked against psi at 0."""
    phi = solve_phi(spec, lam, rtol, n_samples=2).states[-1]
    psi = solve_psi(spec, lam, rtol, n_samples=2).states[-1]
    d = phi.dy_alpha + spec.H * phi.y
    d_alt = -(psi.dy_alpha - spec.h * psi.y)
    disc = float(abs(d - d_alt) / (1.0 + abs(d)))
    if not disc < limit:
        raise ConsistencyError(f"characteristic values disagree at lam={lam}: discrepancy {disc:.3e}")
    return CharacteristicValue(lam, d, d_alt, disc)


def wronskian_drift(spec: ProblemSpec, lam: complex, rtol: float = ODE_RTOL) -> tuple[complex, float]:
    """W_alpha[psi, phi] at the first sample and its max relative drift over all 257 samples."""
    phi = solve_phi(spec, lam, rtol)
    psi = solve_psi(spec, lam, rtol)
    w = np.array([fractional_wronskian(b, a) for a, b in zip(phi.states, reversed(psi.states))])
    return complex(w[0]), float(np.max(np.abs(w - w[0])) / (1.0 + abs(w[0])))


# ---------------------------------------------------------------------------
# integral equation and asymptotic checks
# ---------------------------------------------------------------------------

def _phase(spec: ProblemSpec, lam: float, u):
    return lam * u - spec.Q_u(u)


def integral_equation_residual(spec: ProblemSpec, lam: float, rtol: float = ODE_RTOL, n_points: int = 33) -> float:
    """Max over an x-grid of |RHS(x) - phi(x)| for the integral equation satisfied by phi.

    RHS(x) = cos(theta(x)) + h/(lam - p(0)) sin(theta(x))
             + int_0^x sin(theta(x) - theta(t)) / (lam - p(t))
                       [(q + p^2) phi + D^a p / (lam - p) D^a phi](t) d_a t
    with theta(x) = lam x^a / a - Q(x).
    """
    lam = float(lam)
    grid = np.linspace(0.0, math.pi, 2001)
    bound = 2.0 * float(np.max(np.abs(spec.p(grid)))) + 1.0
    if not abs(lam) > bound:
        raise DomainError(f"integral equation check needs |lam| > 2 max|p| + 1 = {bound:.6g}, got {lam}")
    x_pts = np.linspace(0.0, math.pi, n_points)
    u_pts = spec.cmap.u(x_pts)
    u_pts[-1] = spec.U
    # Gauss panels inside every grid interval, enough to resolve the oscillation
    per = max(2, int(math.ceil(abs(lam) * spec.U / (n_points - 1) / 2.0)))
    edges = np.concatenate([np.linspace(a, b, per + 1)[:-1] for a, b in zip(u_pts[:-1], u_pts[1:])] + [[spec.U]])
    if spec.graded:
        # grade the first panel toward u = 0 where x(u) is not smooth
        edges = np.concatenate(([0.0], edges[1] * 0.15 ** np.arange(18, 0, -1), edges[1:]))
    gx, gw = gauss_legendre(16)
    width = np.diff(edges)
    nodes = (edges[:-1, None] + width[:, None] * gx).ravel()
    weights = (width[:, None] * gw).ravel()
    y, dy, _ = _integrate(spec, lam, 0.0, spec.U, 1.0, spec.h, nodes, rtol)
    P, dP = spec.P(nodes), spec.dP(nodes)
    g = ((spec.q_u(nodes) + P * P) * y + dP / (lam - P) * dy) / (lam - P)
    th = _phase(spec, lam, nodes)
    # sin(theta_x - theta_t) = sin(theta_x) cos(theta_t) - cos(theta_x) sin(theta_t)
    panel_of_node = np.repeat(np.arange(len(width)), len(gx))
    Ic = np.concatenate(([0.0], np.cumsum(np.bincount(panel_of_node, weights * g * np.cos(th)))))
    Is = np.concatenate(([0.0], np.cumsum(np.bincount(panel_of_node, weights * g * np.sin(th)))))
    idx = np.searchsorted(edges, u_pts)
    phi_pts, _, _ = _integrate(spec, lam, 0.0, spec.U, 1.0, spec.h, u_pts, rtol)
    thx = _phase(spec, lam, u_pts)
    rhs = (np.cos(thx) + spec.h / (lam - spec.p_0) * np.sin(thx)
           + np.sin(thx) * Ic[idx] - np.cos(thx) * Is[idx])
    return float(np.max(np.abs(rhs - phi_pts)))


def phi_at(spec: ProblemSpec, lam: complex, x, rtol: float = ODE_RTOL) -> tuple[np.ndarray, np.ndarray]:
    """(phi, D^alpha phi) at arbitrary increasing points x in [0, pi]."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = spec.cmap.u(x)
    u = np.where(x >= math.pi, spec.U, u)
    y, dy, _ = _integrate(spec, lam, 0.0, spec.U, 1.0, spec.h, u, rtol)
    return y, dy


def leading_phi(spec: ProblemSpec, lam: float, x) -> np.ndarray:
    """cos(lam x^a / a - Q(x)), the leading large-lam behaviour of phi."""
    return np.cos(_phase(spec, lam, spec.cmap.u(np.asarray(x, dtype=float))))


def refined_phi(spec: ProblemSpec, lam: float, x: float, form: str = "printed") -> float:
    """The three-order large-lam expansion of phi(x, lam).

    ``form="printed"`` uses (p(x)^(1+a) - p(0)^(1+a))/2 + (p(x) - p(0))^(1+a)/(4(1+a))
    in the 1/lam**2 cos coefficient; its remainder is only O(lam**-2) once p
    varies.  ``form="consistent"`` uses (p(x)^2 - p(0)^2)/4 + (p(x) - p(0))^2/8,
    the amplitude factor sqrt((lam - p(0)) / (lam - p(x))) expanded to second
    order, and has remainder O(lam**-3).
    """
    lam = float(lam)
    a = spec.alpha
    ux = float(spec.cmap.u(x)) if x < math.pi else spec.U
    px, p0 = float(spec.p(x)), spec.p_0
    th = lam * ux - float(spec.Q_u(ux))
    s, c = math.sin(th), math.cos(th)
    n_panels = 1 << max(6, int(math.ceil(math.log2(4 * abs(lam) * ux + 1))))
    u, w = panel_rule(graded_edges(ux, n_panels, spec.graded), 16)
    P = spec.P(u)
    qp2 = spec.q_u(u) + P * P
    Qu = spec.Q_u(u)
    arg = lam * (ux - 2 * u) - float(spec.Q_u(ux)) + 2 * Qu
    I = float(np.dot(w, qp2))
    osc = 0.5 * np.dot(w, qp2 * np.sin(arg)) - 0.5 * np.dot(w, spec.dP(u) * np.cos(arg))
    second_s = spec.h * (px + p0) / 2 + 0.25 * np.dot(w, qp2 * (px - p0 + 2 * P))
    if form == "printed":
        amplitude = ((power_1a(px, a, "p(x)^(1+alpha)") - power_1a(p0, a, "p(0)^(1+alpha)")) / 2
                     + power_1a(px - p0, a, "(p(x)-p(0))^(1+alpha)") / (4 * (1 + a)))
    elif form == "consistent":
        amplitude = (px * px - p0 * p0) / 4 + (px - p0) ** 2 / 8
    else:
        raise ValueError(f"unknown form {form!r}")
    second_c = amplitude - spec.h / 2 * I - I * I / 8
    return float(c + (px - p0) / (2 * lam) * c + (spec.h + 0.5 * I) / lam * s + osc / lam
                 + second_s / lam ** 2 * s + second_c / lam ** 2 * c)


def fundamental_system_residual(spec: ProblemSpec, lam: float, n_points: int = 20) -> float:
    """Residual of cos(theta) and sin(theta), theta = lam u - Q, in the comparison equation.

    The equation is y'' + P'/(lam - P) y' + (lam - P)^2 y = 0 in u; derivatives of
    the candidate solutions are taken analytically from theta' = lam - P and
    theta'' = -P'.
    """
    u = np.linspace(0.05, 0.95, n_points) * spec.U
    P, dP = spec.P(u), spec.dP(u)
    th = _phase(spec, lam, u)
    d1 = lam - P
    worst = 0.0
    for f, fp in ((np.cos, lambda t: -np.sin(t)), (np.sin, np.cos)):
        y = f(th)
        yp = fp(th) * d1
        # second derivative: f''(th) th'^2 + f'(th) th''
        ypp = -f(th) * d1 * d1 + fp(th) * (-dP)
        res = ypp + dP / d1 * yp + d1 * d1 * y
        worst = max(worst, float(np.max(np.abs(res)) / (1.0 + lam * lam)))
    return worst


__all__ = [
    "CharacteristicValue",
    "ConsistencyError",
    "IntegrationError",
    "IntegratorStats",
    "Trajectory",
    "delta",
    "fundamental_system_residual",
    "integral_equation_residual",
    "leading_phi",
    "phi_at",
    "refined_phi",
    "solve_phi",
    "solve_psi",
    "wronskian_drift",
]
