"""Mean-field Blume-Capel model on the line h = 0.

Mole fractions (x1, x0, xm1) of the spin values +1, 0, -1 live on the simplex
and the free energy (up to a constant) is

    Phi = 4 beta x1 xm1 + beta x0 (1 - x0) + lam x0 + sum x log x.

At low temperature there are three competing local minima, each dominated by
one spin value.  Their free energies cross at lam_t(beta) ~ exp(-beta).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import BranchLost, NoCrossing, ParameterOutOfRange

log = logging.getLogger(__name__)

_ORDER = (1, 0, -1)  # index of spin value in (x1, x0, xm1)


@dataclass(frozen=True)
class MoleFractions:
    x1: float
    x0: float
    xm1: float

    def __post_init__(self):
        if min(self.x1, self.x0, self.xm1) < -1e-15 or abs(self.x1 + self.x0 + self.xm1 - 1.0) > 1e-12:
            raise ParameterOutOfRange("mole fractions must lie on the simplex")

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x0, self.xm1])

    def component(self, spin: int) -> float:
        return (self.x1, self.x0, self.xm1)[_ORDER.index(spin)]


@dataclass(frozen=True)
class BranchReport:
    dominant: int
    minimizer: MoleFractions
    phi: float
    newton_residual: float


def _logs(x: np.ndarray) -> np.ndarray:
    # log of each coordinate; the dominant one via log1p of the others
    out = np.full(3, -np.inf)
    big = int(np.argmax(x))
    for i in range(3):
        if i == big and x[i] > 0.5:
            a, b = (x[j] for j in range(3) if j != i)
            out[i] = math.log1p(-(a + b))
        elif x[i] > 0:
            out[i] = math.log(x[i])
    return out


def phi_bc(beta: float, lam: float, x) -> float:
    """Blume-Capel mean-field free energy with 0 log 0 = 0."""
    if isinstance(x, MoleFractions):
        x = x.as_array()
    x = np.asarray(x, dtype=float)
    x1, x0, xm1 = x
    lg = _logs(x)
    t = [xi * li if xi > 0 else 0.0 for xi, li in zip(x, lg)]
    # pair the +1 and -1 terms so the mirror image evaluates identically
    ent = (t[0] + t[2]) + t[1]
    one_minus_x0 = x1 + xm1
    return float(4.0 * beta * (x1 * xm1) + beta * x0 * one_minus_x0 + lam * x0 + ent)


def _potentials(beta, lam, x, lg):
    # T_s with x_s e^{...} = common value; log form
    x1, x0, xm1 = x
    return np.array([
        lg[0] + 4.0 * beta * xm1,
        lg[1] + beta * (1.0 - 2.0 * x0) + lam,
        lg[2] + 4.0 * beta * x1,
    ])


def stationarity_residual(beta: float, lam: float, x) -> float:
    """Max pairwise gap of the three log-potentials (zero at stationary points)."""
    if isinstance(x, MoleFractions):
        x = x.as_array()
    x = np.asarray(x, dtype=float)
    T = _potentials(beta, lam, x, _logs(x))
    return float(T.max() - T.min())


def _solve_branch(beta, lam, dom_idx, y0, max_iter=100):
    """Newton in the logs of the two minority fractions."""
    minor = [i for i in range(3) if i != dom_idx]
    y = np.array(y0, dtype=float)

    def assemble(yv):
        x = np.zeros(3)
        x[minor[0]], x[minor[1]] = math.exp(yv[0]), math.exp(yv[1])
        x[dom_idx] = 1.0 - x[minor[0]] - x[minor[1]]
        lg = np.zeros(3)
        lg[minor[0]], lg[minor[1]] = yv
        lg[dom_idx] = math.log1p(-(x[minor[0]] + x[minor[1]])) if x[dom_idx] > 0 else -np.inf
        return x, lg

    def residual(yv):
        x, lg = assemble(yv)
        T = _potentials(beta, lam, x, lg)
        return np.array([T[minor[0]] - T[dom_idx], T[minor[1]] - T[dom_idx]]), x, lg

    # dT_i/dx_j
    def jac(x):
        Jx = np.array([
            [1.0 / x[0], 0.0, 4.0 * beta],
            [0.0, 1.0 / x[1] - 2.0 * beta, 0.0],
            [4.0 * beta, 0.0, 1.0 / x[2]],
        ])
        dx = np.zeros((3, 2))
        for c, i in enumerate(minor):
            dx[i, c] = x[i]
            dx[dom_idx, c] = -x[i]
        dT = Jx @ dx
        return np.array([dT[minor[0]] - dT[dom_idx], dT[minor[1]] - dT[dom_idx]])

    for _ in range(max_iter):
        F, x, lg = residual(y)
        if not np.all(np.isfinite(F)) or x[dom_idx] <= 0:
            return None
        if np.max(np.abs(F)) < 1e-13:
            return x
        try:
            step = -np.linalg.solve(jac(x), F)
        except np.linalg.LinAlgError:
            return None
        # keep the dominant fraction positive
        t = 1.0
        while t > 1e-10:
            trial = y + t * step
            with np.errstate(over="ignore"):
                xt = np.exp(trial)  # an overflow sums to inf and is rejected below
            if xt.sum() < 1.0 and np.max(np.abs(residual(trial)[0])) < max(np.max(np.abs(F)), 1e-12) * (1 - 1e-4 * t) + 1e-14:
                break
            t *= 0.5
        y = y + t * step
    F, x, _ = residual(y)
    return x if np.max(np.abs(F)) < 1e-10 else None


def _seeds(beta, lam):
    # leading asymptotics of the three dominant branches
    return {
        0: (1, [-beta + lam, -beta + lam]),  # x0-dominant: minority (x1, xm1)
        1: (0, [-beta - lam, -4.0 * beta]),  # x1-dominant: minority (x0, xm1)
        -1: (2, [-4.0 * beta, -beta - lam]),  # xm1-dominant: minority (x1, x0)
    }


def stationary_branches(beta: float, lam: float) -> list[BranchReport]:
    """Converged stationary points on the three dominant branches.

    For beta < 5 the asymptotic seeds are not reliable; a single Newton solve
    from the uniform point is reported instead (dominant = argmax).  Branches
    where Newton fails are logged and omitted.
    """
    out = []
    if beta < 5:
        x = _solve_branch(beta, lam, 1, [math.log(1 / 3), math.log(1 / 3)])
        if x is None:
            log.warning("central stationary point lost at beta=%g lam=%g", beta, lam)
            return out
        spin = _ORDER[int(np.argmax(x))] if np.ptp(x) > 1e-12 else 0
        out.append(_report(beta, lam, spin, x))
        return out
    for spin, (idx, seed) in _seeds(beta, lam).items():
        x = _solve_branch(beta, lam, idx, seed)
        if x is None or x[idx] <= 0.5:
            log.warning("branch %+d lost at beta=%g lam=%g", spin, beta, lam)
            continue
        out.append(_report(beta, lam, spin, x))
    return out


def _report(beta, lam, spin, x):
    mf = MoleFractions(float(x[0]), float(x[1]), float(x[2]))
    return BranchReport(spin, mf, phi_bc(beta, lam, x), stationarity_residual(beta, lam, x))


def branch_free_energies(beta: float, lam: float) -> tuple[float, float]:
    """(phi0, phi1): free energies of the zero-dominated and plus-dominated minima."""
    reports = {r.dominant: r for r in stationary_branches(beta, lam)}
    if 0 not in reports or 1 not in reports:
        raise BranchLost(f"a dominant branch is missing at beta={beta}, lam={lam}")
    return reports[0].phi, reports[1].phi


def lambda_t(beta: float, tol: float = 1e-12) -> float:
    """Chemical potential where the zero- and plus-dominated branches tie."""
    if beta < 8:
        raise ParameterOutOfRange("lambda_t needs beta >= 8")
    scale = math.exp(-beta)

    def gap(lam):
        p0, p1 = branch_free_energies(beta, lam)
        return p0 - p1

    lo, hi = 0.0, 4.0 * scale
    glo, ghi = gap(lo), gap(hi)
    if not (glo < 0 < ghi):
        raise NoCrossing(f"no sign change of phi0 - phi1 on [0, 4 e^-beta] at beta={beta}")
    return float(optimize.brentq(gap, lo, hi, xtol=tol * scale, rtol=1e-15))


def tangent_hessian(beta: float, lam: float, x) -> np.ndarray:
    """Hessian of Phi on the simplex tangent plane, basis (e1 - e0, em1 - e0)."""
    if isinstance(x, MoleFractions):
        x = x.as_array()
    x1, x0, xm1 = x
    H = np.array([
        [1.0 / x1, 0.0, 4.0 * beta],
        [0.0, 1.0 / x0 - 2.0 * beta, 0.0],
        [4.0 * beta, 0.0, 1.0 / xm1],
    ])
    B = np.array([[1.0, 0.0], [-1.0, -1.0], [0.0, 1.0]])
    return B.T @ H @ B


def _slice_min(fun, lo, hi):
    grid = np.linspace(lo, hi, 257)
    vals = np.array([fun(t) for t in grid])
    i = int(np.argmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = optimize.minimize_scalar(fun, bounds=(a, b), method="bounded", options={"xatol": 1e-13})
    return min(float(res.fun), float(vals[i]))


def boundary_gap(beta: float, lam: float, C: float) -> float:
    """min Phi on {max coordinate = 1 - C e^-beta} minus the global minimum."""
    if abs(lam) > C * math.exp(-beta):
        raise ParameterOutOfRange("need |lam| <= C e^-beta")
    eps = C * math.exp(-beta)
    if not 0 < eps < 2.0 / 3.0:
        raise ParameterOutOfRange("C e^-beta must be below 2/3")
    best = math.inf
    for dom in range(3):
        minor = [i for i in range(3) if i != dom]

        def fun(t, dom=dom, minor=minor):
            x = np.zeros(3)
            x[dom] = 1.0 - eps
            x[minor[0]] = t * eps
            x[minor[1]] = (1.0 - t) * eps
            return phi_bc(beta, lam, x)

        best = min(best, _slice_min(fun, 0.0, 1.0))
    inf_phi = min(r.phi for r in stationary_branches(beta, lam))
    return best - inf_phi


# ---------------------------------------------------------------------------
# Ising reference


def ising_reference(J: float, h: float, z1: float) -> float:
    """J z1 z-1 - h z1 + z1 log z1 + z-1 log z-1 with z-1 = 1 - z1."""
    if not 0.0 <= z1 <= 1.0:
        raise ParameterOutOfRange("z1 must lie in [0, 1]")
    zm = 1.0 - z1
    ent = (z1 * math.log(z1) if z1 > 0 else 0.0) + (zm * math.log(zm) if zm > 0 else 0.0)
    return J * z1 * zm - h * z1 + ent


def ising_local_minima(J: float, h: float) -> list[float]:
    """Interior local minima in z1 of the Ising reference free energy."""
    # stationarity: log(z1/(1-z1)) = h - J (1 - 2 z1); scan the derivative for - to + crossings
    d = lambda z: J * (1.0 - 2.0 * z) - h + math.log(z / (1.0 - z))
    grid = np.linspace(1e-12, 1 - 1e-12, 4001)
    vals = np.array([d(z) for z in grid])
    mins = []
    for i in range(grid.size - 1):
        if vals[i] < 0 <= vals[i + 1]:
            z = optimize.brentq(d, grid[i], grid[i + 1], xtol=1e-15)
            if h == 0 and abs(z - 0.5) < 1e-4:
                # z1 = 1/2 is exactly stationary at h = 0; flat roots lose digits
                z = 0.5
            mins.append(z)
    return mins


@dataclass(frozen=True)
class IsingCheck:
    """Outcome of the Ising reference properties on one (J, h) point.

    ``unique_symmetric`` (J <= 2, h = 0: only z1 = 1/2) and ``heavy_split``
    (J > 2, h = 0: J z1 > 1 > J z-1 at the heavy minimum) are None outside
    their regimes.  ``curvature_unit`` checks J(1 - m^2) <= 1 at the global
    minimum; ``curvature_second_order`` checks J(1 - m^2) <= 2, the bound
    implied by a non-negative second derivative, at every local minimum.
    """

    J: float
    h: float
    minima: tuple
    unique_symmetric: bool | None
    heavy_split: bool | None
    curvature_unit: bool
    curvature_second_order: bool


def ising_properties_check(J: float, h: float) -> IsingCheck:
    mins = ising_local_minima(J, h)
    i1 = i2 = None
    if h == 0 and J <= 2:
        i1 = len(mins) == 1 and mins[0] == 0.5
    if h == 0 and J > 2:
        heavy = max(mins)
        i2 = len(mins) == 2 and J * heavy > 1 > J * (1 - heavy)
    glob = min(mins, key=lambda z: ising_reference(J, h, z))
    unit = J * (1 - (2 * glob - 1) ** 2) <= 1 + 1e-12
    second = all(J * (1 - (2 * z - 1) ** 2) <= 2 + 1e-9 for z in mins)
    return IsingCheck(J, h, tuple(mins), i1, i2, unit, second)
