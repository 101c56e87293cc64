"""Exact mean-field analysis of the q-state Potts model.

Magnetizations are written in barycentric coordinates x = (x_1, ..., x_q) on
the probability simplex; the field h couples to x_1 only.  The free energy is

    Phi(x) = sum_k [-(beta/2) x_k^2 + x_k log x_k] - h x_1.

On the axis x_1 = (1 + (q-1) theta)/q, x_k = (1 - theta)/q the stationary
points solve theta = f(theta) with
f(theta) = (e^{beta theta + h} - 1) / (e^{beta theta + h} + q - 1).
For negative fields the competing symmetric branch x_1 < x_2 = ... = x_q
solves theta = g(theta) with
g(theta) = (e^{beta theta - h} - 1) / ((q - 1) e^{beta theta - h} + 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import xlogy

from .errors import DegenerateBranches, InnerNotOrdered, NoCrossing, OutOfRange, ParameterOutOfRange


@dataclass(frozen=True)
class BarycentricVector:
    q: int
    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        if x.size != self.q:
            raise ParameterOutOfRange(f"expected {self.q} coordinates")
        if np.any(x < -1e-15) or abs(x.sum() - 1.0) > 1e-12:
            raise ParameterOutOfRange("barycentric coordinates must be a probability vector")
        object.__setattr__(self, "x", x)

    @property
    def squared_norm(self) -> float:
        return float(self.x @ self.x)


@dataclass(frozen=True)
class OnAxisSolutions:
    theta_values: tuple
    branch_tags: tuple  # "min" or "max" per root

    @property
    def minima(self) -> list[float]:
        return [t for t, tag in zip(self.theta_values, self.branch_tags) if tag == "min"]


@dataclass(frozen=True)
class PhaseLinePoint:
    """A coexistence point.

    ``theta_low``/``x_low`` describe the branch with the smaller x_1-ordering
    parameter (the less ordered one on the positive-field line, the symmetric
    branch on the negative-field line); ``theta_high``/``x_high`` the other.
    On the negative-field line ``theta_high`` is the inner (q-1)-state order
    parameter of the asymmetric branch.
    """

    h: float
    beta_t: float
    theta_low: float
    theta_high: float
    e_S: float
    e_A: float
    x_low: np.ndarray = field(repr=False)
    x_high: np.ndarray = field(repr=False)
    q: int = 0

    @property
    def x1_low(self) -> float:
        return float(self.x_low[0])

    @property
    def x1_high(self) -> float:
        return float(self.x_high[0])

    @property
    def delta_phi(self) -> float:
        return phi_potts(self.q, self.beta_t, self.h, self.x_high) - phi_potts(self.q, self.beta_t, self.h, self.x_low)


def _coords(x):
    if isinstance(x, BarycentricVector):
        return x.x
    return np.asarray(x, dtype=float).reshape(-1)


def phi_potts(q: int, beta: float, h: float, x) -> float:
    """Mean-field Potts free energy at barycentric coordinates x (0 log 0 = 0)."""
    x = _coords(x)
    return float(np.sum(-0.5 * beta * x * x + xlogy(x, x)) - h * x[0])


def _exp_ratio(u, a, b, c, d):
    # (a e^u + b) / (c e^u + d) without overflow for large |u|
    if u > 0:
        e = math.exp(-u)
        return (a + b * e) / (c + d * e)
    e = math.exp(u)
    return (a * e + b) / (c * e + d)


def f_onaxis(q: int, beta: float, h: float, theta: float) -> float:
    return _exp_ratio(beta * theta + h, 1.0, -1.0, 1.0, q - 1.0)


def g_onaxis(q: int, beta: float, h: float, theta: float) -> float:
    return _exp_ratio(beta * theta - h, 1.0, -1.0, q - 1.0, 1.0)


def f_prime(q: int, beta: float, h: float, theta: float) -> float:
    u = beta * theta + h
    share = _exp_ratio(u, 1.0, 0.0, 1.0, q - 1.0)  # e^u/(e^u + q - 1)
    return beta * share * (1.0 - f_onaxis(q, beta, h, theta))


def f_second(q: int, beta: float, h: float, theta: float) -> float:
    u = beta * theta + h
    share = _exp_ratio(u, 1.0, 0.0, 1.0, q - 1.0)
    return f_prime(q, beta, h, theta) * beta * (1.0 - 2.0 * share)


def inflection_theta(q: int, beta: float, h: float) -> float:
    return (math.log(q - 1) - h) / beta


def onaxis_x(q: int, theta: float) -> np.ndarray:
    x = np.full(q, (1.0 - theta) / q)
    x[0] = (1.0 + (q - 1) * theta) / q
    return x


def _roots_on(fun, dfun, lo, hi, concave):
    """Roots of a concave (or convex) function on [lo, hi].

    The derivative is monotone, so locating its zero splits the interval into
    at most two monotone pieces with at most one root each.
    """
    if hi <= lo:
        return []
    pieces = [(lo, hi)]
    dlo, dhi = dfun(lo), dfun(hi)
    roots = []
    if dlo * dhi < 0:
        turn = optimize.brentq(dfun, lo, hi, xtol=1e-15, rtol=1e-15)
        pieces = [(lo, turn), (turn, hi)]
        if abs(fun(turn)) < 1e-15:
            # tangential (double) root
            roots.append(turn)
    for a, b in pieces:
        fa, fb = fun(a), fun(b)
        if fa == 0.0:
            roots.append(a)
        elif fb == 0.0:
            roots.append(b)
        elif fa * fb < 0:
            roots.append(optimize.brentq(fun, a, b, xtol=1e-16, rtol=1e-15, maxiter=200))
    return roots


def solve_onaxis(q: int, beta: float, h: float) -> OnAxisSolutions:
    """All roots of theta = f(theta), classified as minima or maxima of phi.

    The search interval is [0, 1] for h >= 0 and [-1/(q-1), 1] for h < 0.
    theta - f(theta) is concave below the inflection point theta_I of f and
    convex above it, so each side holds at most two roots.
    """
    if q < 2:
        raise ParameterOutOfRange("q must be >= 2")
    lo, hi = (0.0 if h >= 0 else -1.0 / (q - 1)), 1.0
    gfun = lambda t: t - f_onaxis(q, beta, h, t)
    dg = lambda t: 1.0 - f_prime(q, beta, h, t)
    if beta == 0:
        roots = [f_onaxis(q, beta, h, 0.0)]
    else:
        ti = min(max(inflection_theta(q, beta, h), lo), hi)
        roots = _roots_on(gfun, dg, lo, ti, True) + _roots_on(gfun, dg, ti, hi, False)
    roots = sorted(roots)
    merged = []
    for r in roots:
        if not merged or abs(r - merged[-1]) > 1e-13:
            merged.append(r)
    tags = tuple("min" if f_prime(q, beta, h, t) < 1.0 - 1e-12 else "max" for t in merged)
    return OnAxisSolutions(tuple(merged), tags)


def beta_mf(q: int) -> float:
    if q < 3:
        raise ParameterOutOfRange("beta_mf needs q >= 3")
    return 2.0 * (q - 1) / (q - 2) * math.log(q - 1)


def m_mf_at_transition(q: int) -> float:
    if q < 3:
        raise ParameterOutOfRange("m_mf needs q >= 3")
    return (q - 2) / q


@dataclass(frozen=True)
class CriticalEndpoint:
    q: int
    beta0: float
    hc: float
    theta: float
    hc_closed_form: float  # log(q-1) - 2(q-2)/q
    hc_log_q: float  # log q - 2(q-2)/q, the log q variant of the closed form

    def metadata(self) -> dict:
        return {
            "beta0": self.beta0,
            "hc_solved": self.hc,
            "hc_log_q_minus_1": self.hc_closed_form,
            "hc_log_q_variant": self.hc_log_q,
            "hc_discrepancy": self.hc_log_q - self.hc,
        }


def critical_endpoint(q: int) -> CriticalEndpoint:
    """Solve f(theta) = theta, f'(theta) = 1, f''(theta) = 0 for (theta, beta, h)."""
    if q < 3:
        raise ParameterOutOfRange("critical endpoint needs q >= 3")

    def eqs(v):
        t, b, hh = v
        return [t - f_onaxis(q, b, hh, t), f_prime(q, b, hh, t) - 1.0, f_second(q, b, hh, t) / b**2]

    guess = [0.3, 3.0, 0.0]
    sol = optimize.root(eqs, guess, method="hybr", options={"xtol": 1e-15})
    t, b, hh = sol.x
    return CriticalEndpoint(q, float(b), float(hh), float(t),
                            math.log(q - 1) - 2.0 * (q - 2) / q,
                            math.log(q) - 2.0 * (q - 2) / q)


def _onaxis_branch_phi(q, beta, h, theta):
    return phi_potts(q, beta, h, onaxis_x(q, theta))


def _plus_sign(q, beta, h):
    """-1 if the more ordered branch wins (or is alone), +1 otherwise, with branch data."""
    sol = solve_onaxis(q, beta, h)
    mins = [t for t in sol.minima if t >= 0.0]
    if len(mins) == 1:
        ti = inflection_theta(q, beta, h)
        return (-1 if mins[0] > ti else 1), None
    low, high = mins[0], mins[-1]
    dphi = _onaxis_branch_phi(q, beta, h, high) - _onaxis_branch_phi(q, beta, h, low)
    return (-1 if dphi < 0 else 1), (low, high, dphi)


def beta_plus(q: int, h: float, tol: float = 1e-12) -> PhaseLinePoint:
    """Coexistence temperature on the positive-field line, 0 < h < hc(q)."""
    if q < 3:
        raise ParameterOutOfRange("beta_plus needs q >= 3")
    ce = critical_endpoint(q)
    if not 0 < h < ce.hc:
        raise OutOfRange(f"positive-field line exists for 0 < h < hc = {ce.hc:.12g}")
    lo, hi = ce.beta0, beta_mf(q)
    if _plus_sign(q, hi, h)[0] != -1:
        raise NoCrossing("ordered branch does not win at beta_mf")
    # bisection on the winner until both branches coexist at both ends, then brentq on the gap
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        sgn, data_mid = _plus_sign(q, mid, h)
        if sgn == -1:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-3:
            dl, dh = _plus_sign(q, lo, h)[1], _plus_sign(q, hi, h)[1]
            if dl is not None and dh is not None and dl[2] * dh[2] < 0:
                gap = lambda b: _plus_sign(q, b, h)[1][2]
                beta_t = optimize.brentq(gap, lo, hi, xtol=tol, rtol=1e-15)
                return _plus_point(q, h, beta_t)
    return _plus_point(q, h, 0.5 * (lo + hi))


def _plus_point(q, h, beta):
    mins = [t for t in solve_onaxis(q, beta, h).minima if t >= 0.0]
    low, high = mins[0], mins[-1]
    xl, xh = onaxis_x(q, low), onaxis_x(q, high)
    return PhaseLinePoint(h, beta, low, high, float(xl @ xl), float(xh @ xh), xl, xh, q)


# ---------------------------------------------------------------------------
# negative fields


def symmetric_branch(q: int, beta: float, h: float) -> tuple[float, np.ndarray]:
    """Unique root of theta = g(theta) on [0, 1/(q-1)] and its barycentric vector."""
    fun = lambda t: t - g_onaxis(q, beta, h, t)
    hi = 1.0 / (q - 1)
    if fun(0.0) >= 0:
        theta = 0.0
    else:
        theta = optimize.brentq(fun, 0.0, hi, xtol=1e-16, rtol=1e-15, maxiter=200)
    u = beta * theta - h
    # x_1 = 1/((q-1) e^u + 1) avoids the cancellation in 1/q - (q-1) theta/q
    x1 = _exp_ratio(u, 0.0, 1.0, q - 1.0, 1.0)
    x = np.full(q, (1.0 - x1) / (q - 1))
    x[0] = x1
    return theta, x


def _inner_ordered_theta(q_inner: int, t: float) -> float:
    sol = solve_onaxis(q_inner, t, 0.0)
    mins = [th for th in sol.minima if th > 1e-12]
    if not mins:
        raise InnerNotOrdered(f"no ordered {q_inner}-state minimizer at effective beta {t:.6g}")
    return mins[-1]


def psi_partial(q: int, beta: float, h: float, x1: float) -> float:
    """Free energy restricted to asymmetric configurations with first coordinate x1.

    The remaining mass 1 - x1 is distributed as the ordered zero-field
    (q-1)-state minimizer at effective inverse temperature beta (1 - x1).
    """
    if q < 4:
        raise ParameterOutOfRange("psi_partial needs q >= 4")
    return phi_potts(q, beta, h, asymmetric_vector(q, beta, x1))


def asymmetric_vector(q: int, beta: float, x1: float) -> np.ndarray:
    t = beta * (1.0 - x1)
    th = _inner_ordered_theta(q - 1, t)
    z = onaxis_x(q - 1, th)
    x = np.empty(q)
    x[0] = x1
    # ordered inner coordinate placed last (representative of the degenerate family)
    x[1:] = (1.0 - x1) * z[::-1]
    return x


def psi_upper_limit(q: int, beta: float) -> float:
    return min(1.0 / q, 1.0 - _beta_mf_inner(q) / beta)


def _beta_mf_inner(q: int) -> float:
    # zero-field transition of the (q-1)-state model; q - 1 = 2 is continuous at beta = 2
    return beta_mf(q - 1) if q - 1 >= 3 else 2.0


def asymmetric_branch(q: int, beta: float, h: float) -> tuple[float, np.ndarray] | None:
    """Minimum of psi over (0, a_max]; None if the asymmetric family is absent."""
    a_max = psi_upper_limit(q, beta)
    if a_max <= 0:
        return None
    fun = lambda x: psi_partial(q, beta, h, x)
    grid = np.unique(np.concatenate([a_max * np.logspace(-16, -2, 32), a_max * np.arange(1, 129) / 128]))
    vals = np.array([fun(x) for x in grid])
    i = int(np.argmin(vals))
    lo = grid[i - 1] if i > 0 else 0.0
    hi = grid[i + 1] if i + 1 < grid.size else a_max
    res = optimize.minimize_scalar(fun, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-14 * max(1.0, hi), "maxiter": 500})
    x1 = float(res.x) if res.fun <= vals[i] else float(grid[i])
    x1 = _polish_x1(lambda t: asymmetric_vector(q, beta, t), beta, h, x1, a_max)
    return x1, asymmetric_vector(q, beta, x1)


def _polish_x1(assemble, beta, h, x1, upper):
    """Refine a scalar minimizer by a root solve on the stationarity condition.

    Bounded scalar minimization locates x_1 only to about sqrt(machine eps);
    the condition x_1 e^(-beta x_1 - h) = x_q e^(-beta x_q) pins it to rounding.
    """
    def resid(t):
        x = assemble(t)
        return (math.log(x[0]) - beta * x[0] - h) - (math.log(x[-1]) - beta * x[-1])

    for d in (1e-9, 1e-7, 1e-5):
        lo, hi = max(x1 - d, x1 * 0.5), min(x1 + d, upper)
        try:
            if resid(lo) * resid(hi) < 0:
                return float(optimize.brentq(resid, lo, hi, xtol=1e-16, rtol=1e-15, maxiter=200))
        except (InnerNotOrdered, ValueError):
            break
    return x1


def _minus_gap(q, beta, h):
    asym = asymmetric_branch(q, beta, h)
    if asym is None:
        return math.inf, None
    _, xs = symmetric_branch(q, beta, h)
    return phi_potts(q, beta, h, asym[1]) - phi_potts(q, beta, h, xs), asym


def beta_minus(q: int, h: float, tol: float = 1e-12) -> PhaseLinePoint:
    """Coexistence temperature on the negative-field line (q >= 4, h < 0)."""
    if q < 4:
        raise ParameterOutOfRange("beta_minus needs q >= 4")
    if not h < 0:
        raise ParameterOutOfRange("beta_minus needs h < 0")
    lo, hi = _beta_mf_inner(q) - 0.1, beta_mf(q) + 0.1
    glo, ghi = _minus_gap(q, lo, h)[0], _minus_gap(q, hi, h)[0]
    if not (glo > 0 and ghi < 0):
        raise NoCrossing(f"no sign change of the branch gap on [{lo:.6g}, {hi:.6g}]")
    while hi - lo > 1e-3:
        mid = 0.5 * (lo + hi)
        gm = _minus_gap(q, mid, h)[0]
        if gm < 0:
            hi, ghi = mid, gm
        else:
            lo, glo = mid, gm
    if math.isfinite(glo):
        beta_t = optimize.brentq(lambda b: _minus_gap(q, b, h)[0], lo, hi, xtol=tol, rtol=1e-15)
    else:
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if _minus_gap(q, mid, h)[0] < 0:
                hi = mid
            else:
                lo = mid
        beta_t = hi
    th_s, xs = symmetric_branch(q, beta_t, h)
    x1a, xa = asymmetric_branch(q, beta_t, h)
    th_a = _inner_ordered_theta(q - 1, beta_t * (1.0 - x1a))
    return PhaseLinePoint(h, beta_t, th_s, th_a, float(xs @ xs), float(xa @ xa), xs, xa, q)


def clausius_clapeyron(q: int, point: PhaseLinePoint) -> float:
    """Slope dh/dbeta of the coexistence line from the jumps across it."""
    dx1 = point.x1_high - point.x1_low
    if abs(dx1) < 1e-8:
        raise DegenerateBranches("branches share the same x_1")
    return -0.5 * (point.e_A - point.e_S) / dx1


def stationarity_residual(q: int, beta: float, h: float, x) -> float:
    """Spread of x_k exp(-beta x_k - h delta_k1) across k (zero at stationary points)."""
    x = _coords(x)
    theta = x * np.exp(-beta * x)
    theta[0] *= math.exp(-h)
    return float(theta.max() - theta.min())


def global_minimizers(q: int, beta: float, h: float, tie: float = 1e-9) -> list[BarycentricVector]:
    """Representatives of the global minimizers.

    h > 0: the on-axis minimizer with x_1 largest.  h < 0: the symmetric
    branch and/or one representative of the asymmetric family.  h = 0: the
    uniform vector and/or one ordered representative.
    """
    if q < 3:
        raise ParameterOutOfRange("global_minimizers needs q >= 3")
    cands = []
    if h >= 0:
        for t in solve_onaxis(q, beta, h).minima:
            if t >= -1e-15:
                cands.append(onaxis_x(q, max(t, 0.0)))
    else:
        cands.append(symmetric_branch(q, beta, h)[1])
        if q >= 4:
            asym = asymmetric_branch(q, beta, h)
            if asym is not None:
                cands.append(asym[1])
        else:
            # q = 3: the asymmetric family is an ordered two-state pair in coordinates 2, 3
            cands.extend(_q3_negative_candidates(beta, h))
    vals = [phi_potts(q, beta, h, x) for x in cands]
    best = min(vals)
    out = []
    for x, v in zip(cands, vals):
        if v <= best + tie and not any(np.allclose(x, o.x, atol=1e-9) for o in out):
            out.append(BarycentricVector(q, x))
    return out


def _q3_negative_candidates(beta, h):
    # minimize over x_1 with the remaining two coordinates in the Ising-type split
    out = []
    def assemble(x1, z):
        return np.array([x1, (1 - x1) * (1 - z), (1 - x1) * z])

    def inner(x1):
        t = beta * (1 - x1)
        if t <= 2.0:
            return 0.5
        m = optimize.brentq(lambda m: m - math.tanh(0.5 * t * m), 1e-12, 1.0)
        return 0.5 * (1 + m)

    fun = lambda x1: phi_potts(3, beta, h, assemble(x1, inner(x1)))
    res = optimize.minimize_scalar(fun, bounds=(1e-15, 1.0 / 3), method="bounded", options={"xatol": 1e-14})
    x1 = _polish_x1(lambda t: assemble(t, inner(t)), beta, h, float(res.x), 1.0 / 3)
    out.append(assemble(x1, inner(x1)))
    return out
