"""Generic mean-field machinery for a finite a priori single-spin measure.

For atoms omega_i with weights w_i the cumulant generating function is
G(b) = log sum_i w_i exp(b . omega_i); the entropy is its Legendre transform
S(m) = inf_b [G(b) - b . m] <= 0, and the mean-field free energy is

    Phi(m) = -(beta/2) |m|^2 - h . m - S(m).

Stationary points solve the self-consistency equation m = grad G(beta m + h).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import Infeasible, NoConvergence, ParameterOutOfRange


@dataclass(frozen=True)
class AprioriMeasure:
    atoms: np.ndarray  # (A, n)
    weights: np.ndarray  # (A,)
    kappa: float = field(init=False)
    _basis: np.ndarray = field(init=False, repr=False)  # orthonormal basis of the affine span directions

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if atoms.shape[0] != w.size:
            raise ParameterOutOfRange("one weight per atom required")
        if np.any(w <= 0):
            raise ParameterOutOfRange("weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ParameterOutOfRange("weights must sum to 1")
        if len(np.unique(np.round(atoms, 14), axis=0)) < 2:
            raise ParameterOutOfRange("measure must be supported on at least two points")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "kappa", float(np.max(np.sum(atoms**2, axis=1))))
        centered = atoms - atoms[0]
        u, sv, vt = np.linalg.svd(centered, full_matrices=False)
        rank = int(np.sum(sv > 1e-12 * max(1.0, sv.max())))
        object.__setattr__(self, "_basis", vt[:rank].T.copy())

    @property
    def n(self) -> int:
        return self.atoms.shape[1]

    @classmethod
    def from_log_weights(cls, atoms, log_weights) -> "AprioriMeasure":
        lw = np.asarray(log_weights, dtype=float)
        w = np.exp(lw - lw.max())
        return cls(atoms, w / w.sum())


def tetrahedral_atoms(q: int) -> np.ndarray:
    """q unit vectors in R^(q-1) with pairwise inner products -1/(q-1)."""
    if q < 2:
        raise ParameterOutOfRange("q must be >= 2")
    e = np.eye(q) - 1.0 / q
    # orthonormal coordinates of the centred simplex
    u, _, _ = np.linalg.svd(e)
    v = e @ u[:, : q - 1]
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    # fix orientation so that the first vertex is +e_1 direction, deterministic
    rot = _householder_to_e1(v[0])
    out = v @ rot.T
    out[0] = 0.0
    out[0, 0] = 1.0  # exact up to rounding already; make it exact
    return out


def _householder_to_e1(a: np.ndarray) -> np.ndarray:
    n = a.size
    e1 = np.zeros(n)
    e1[0] = 1.0
    w = a - e1
    nrm = np.linalg.norm(w)
    if nrm < 1e-14:
        return np.eye(n)
    w /= nrm
    return np.eye(n) - 2.0 * np.outer(w, w)


def potts_measure(q: int) -> AprioriMeasure:
    return AprioriMeasure(tetrahedral_atoms(q), np.full(q, 1.0 / q))


def ising_measure() -> AprioriMeasure:
    return AprioriMeasure(np.array([[1.0], [-1.0]]), np.array([0.5, 0.5]))


@dataclass(frozen=True)
class MFModel:
    measure: AprioriMeasure
    beta: float
    h: np.ndarray

    def __post_init__(self):
        if not (self.beta >= 0 and math.isfinite(self.beta)):
            raise ParameterOutOfRange("beta must be finite and non-negative")
        h = np.asarray(self.h, dtype=float).reshape(-1)
        if h.size == 1 and self.measure.n > 1 and h[0] == 0:
            h = np.zeros(self.measure.n)
        if h.size != self.measure.n:
            raise ParameterOutOfRange("field dimension must match the spin space")
        object.__setattr__(self, "h", h)


def _tilted(measure: AprioriMeasure, b: np.ndarray) -> np.ndarray:
    z = measure.atoms @ np.asarray(b, dtype=float).reshape(-1) + np.log(measure.weights)
    z -= z.max()
    p = np.exp(z)
    return p / p.sum()


def cumulant_G(measure: AprioriMeasure, b) -> float:
    z = measure.atoms @ np.asarray(b, dtype=float).reshape(-1) + np.log(measure.weights)
    zmax = z.max()
    return float(zmax + math.log(np.exp(z - zmax).sum()))


def grad_G(measure: AprioriMeasure, b) -> np.ndarray:
    return _tilted(measure, b) @ measure.atoms


def hess_G(measure: AprioriMeasure, b) -> np.ndarray:
    p = _tilted(measure, b)
    mean = p @ measure.atoms
    c = measure.atoms - mean
    return (c * p[:, None]).T @ c


def interior_margin(measure: AprioriMeasure, m) -> float:
    """Largest t such that m = sum lambda_i omega_i with all lambda_i >= t.

    Positive exactly when m lies in the relative interior of the hull.
    """
    A = measure.atoms
    k = A.shape[0]
    # variables (lambda_1..lambda_k, t); maximize t
    c = np.zeros(k + 1)
    c[-1] = -1.0
    A_eq = np.zeros((A.shape[1] + 1, k + 1))
    A_eq[:-1, :k] = A.T
    A_eq[-1, :k] = 1.0
    b_eq = np.concatenate([np.asarray(m, dtype=float).reshape(-1), [1.0]])
    A_ub = np.zeros((k, k + 1))
    A_ub[:, :k] = -np.eye(k)
    A_ub[:, -1] = 1.0
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(k), A_eq=A_eq, b_eq=b_eq,
                  bounds=[(0, None)] * k + [(None, 1.0)], method="highs")
    if res.status != 0:
        return -math.inf
    return float(-res.fun)


def _legendre_point(measure: AprioriMeasure, m: np.ndarray, tol: float, b0=None) -> np.ndarray:
    """Minimizer b of G(b) - b.m inside the span of the hull directions."""
    B = measure._basis
    m = np.asarray(m, dtype=float).reshape(-1)
    y = np.zeros(B.shape[1]) if b0 is None else B.T @ b0
    obj = lambda yy: cumulant_G(measure, B @ yy) - float((B @ yy) @ m)
    f = obj(y)
    for _ in range(200):
        b = B @ y
        g = B.T @ (grad_G(measure, b) - m)
        if np.linalg.norm(g) <= tol:
            return b
        H = B.T @ hess_G(measure, b) @ B
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = -g
        t = 1.0
        # decrease below the resolution of f: the line search cannot judge it, take the Newton step
        resolvable = -float(g @ step) > 1e-12 * (1.0 + abs(f))
        y_new, f_new = y + step, f
        while resolvable:
            y_new = y + t * step
            f_new = obj(y_new)
            if f_new <= f + 1e-4 * t * float(g @ step) or t < 1e-12:
                break
            t *= 0.5
        if t < 1e-12 and np.linalg.norm(g) > tol:
            # flat objective at double precision; accept if gradient is tiny
            if np.linalg.norm(g) < 1e3 * tol:
                return b
            raise NoConvergence(f"Legendre transform stalled with gradient {np.linalg.norm(g):.3e}")
        y, f = y_new, (f_new if resolvable else obj(y_new))
    b = B @ y
    if np.linalg.norm(B.T @ (grad_G(measure, b) - m)) < 1e3 * tol:
        return b  # gradient at its rounding floor
    raise NoConvergence("Legendre transform did not converge")


def entropy_S(measure: AprioriMeasure, m, tol: float = 1e-13, check: bool = True) -> float:
    """S(m) = inf_b [G(b) - b.m], by damped Newton on the convex objective.

    Raises Infeasible for m outside the relative interior of the hull.
    """
    m = np.asarray(m, dtype=float).reshape(-1)
    if check and interior_margin(measure, m) <= 1e-14:
        raise Infeasible("m is not in the relative interior of the convex hull of the atoms")
    b = _legendre_point(measure, m, tol)
    return cumulant_G(measure, b) - float(b @ m)


def phi(model: MFModel, m, tol: float = 1e-13) -> float:
    m = np.asarray(m, dtype=float).reshape(-1)
    return -0.5 * model.beta * float(m @ m) - float(model.h @ m) - entropy_S(model.measure, m, tol)


def _fixed_point_map(model: MFModel, m):
    return grad_G(model.measure, model.beta * m + model.h)


def stationarity_residual(model: MFModel, m) -> float:
    m = np.asarray(m, dtype=float).reshape(-1)
    return float(np.linalg.norm(m - _fixed_point_map(model, m)))


def mean_field_fixed_point(model: MFModel, m_init, damping: float = 0.5, tol: float = 1e-12,
                           max_iter: int = 100000) -> np.ndarray:
    """Damped iteration m <- (1 - damping) m + damping grad G(beta m + h)."""
    m = np.asarray(m_init, dtype=float).reshape(-1).copy()
    if model.beta == 0:
        return _fixed_point_map(model, m)
    for _ in range(max_iter):
        target = _fixed_point_map(model, m)
        if np.linalg.norm(m - target) <= tol:
            return m
        m = (1.0 - damping) * m + damping * target
    raise NoConvergence(f"fixed point iteration did not converge in {max_iter} steps")


def _newton_polish(model: MFModel, m: np.ndarray, tol: float) -> np.ndarray:
    """Newton on F(m) = m - grad G(beta m + h) restricted to the hull span."""
    B = model.measure._basis
    for _ in range(50):
        F = m - _fixed_point_map(model, m)
        if np.linalg.norm(F) <= tol:
            break
        H = hess_G(model.measure, model.beta * m + model.h)
        Jac = B.T @ (np.eye(m.size) - model.beta * H) @ B
        try:
            step = -B @ np.linalg.solve(Jac, B.T @ F)
        except np.linalg.LinAlgError:
            break
        m = m + step
    return m


def is_local_minimum(model: MFModel, m) -> bool:
    """Second-order test: all eigenvalues of beta * hess_G on the span stay below 1."""
    B = model.measure._basis
    H = B.T @ hess_G(model.measure, model.beta * np.asarray(m) + model.h) @ B
    return bool(np.max(np.linalg.eigvalsh(H)) * model.beta < 1.0 - 1e-10)


def default_starts(measure: AprioriMeasure, n_random: int = 4, seed: int = 0) -> list[np.ndarray]:
    """Centre of the measure, each atom pulled 10% toward it, and random mixtures."""
    centre = grad_G(measure, np.zeros(measure.n))
    starts = [centre]
    starts += [0.9 * a + 0.1 * centre for a in measure.atoms]
    rng = np.random.default_rng(seed)
    for _ in range(n_random):
        lam = rng.dirichlet(np.ones(len(measure.atoms)))
        starts.append(lam @ measure.atoms)
    return starts


def minimize_phi(model: MFModel, starts: Sequence, tol: float = 1e-12) -> list[tuple[np.ndarray, float]]:
    """Local minima of Phi reached from the starts, best first.

    Each start is driven by the damped fixed-point iteration, polished by Newton
    and kept only if it passes the second-order test.  Minima closer than
    1e-6 are merged.
    """
    if len(starts) == 0:
        raise ParameterOutOfRange("starts must be non-empty")
    found: list[tuple[np.ndarray, float]] = []
    for s in starts:
        try:
            m = mean_field_fixed_point(model, s, tol=1e-9, max_iter=200000)
        except NoConvergence:
            continue
        m = _newton_polish(model, m, tol)
        if stationarity_residual(model, m) > 10 * tol or not is_local_minimum(model, m):
            continue
        if any(np.linalg.norm(m - other) < 1e-6 for other, _ in found):
            continue
        try:
            val = phi(model, m)
        except Infeasible:
            continue
        found.append((m, val))
    if not found:
        raise NoConvergence("no start converged to a local minimum")
    found.sort(key=lambda item: item[1])
    return found


def transition_beta(measure: AprioriMeasure, h, beta_lo: float, beta_hi: float,
                    starts: Sequence | None = None, observable: Callable | None = None,
                    tol: float = 1e-7) -> float:
    """Bisect beta for the jump of an observable of the global minimizer.

    The observable defaults to the norm of the minimizer.  The two bracket
    ends must select different phases.
    """
    if starts is None:
        starts = default_starts(measure)
    if observable is None:
        observable = lambda m: float(np.linalg.norm(m))
    h = np.asarray(h, dtype=float)

    def obs(beta):
        best = minimize_phi(MFModel(measure, beta, h), starts)[0][0]
        return observable(best)

    lo_val, hi_val = obs(beta_lo), obs(beta_hi)
    if abs(hi_val - lo_val) < 1e-6:
        raise NoConvergence("bracket ends select the same phase")
    mid_val = 0.5 * (lo_val + hi_val)
    lo_side = lo_val < mid_val
    while beta_hi - beta_lo > tol:
        mid = 0.5 * (beta_lo + beta_hi)
        if (obs(mid) < mid_val) == lo_side:
            beta_lo = mid
        else:
            beta_hi = mid
    return 0.5 * (beta_lo + beta_hi)
