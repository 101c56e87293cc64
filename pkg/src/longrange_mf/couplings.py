"""Reflection-positive coupling families on Z^d.

Three families are supported, plus positive mixtures of them:

* nearest/next-nearest neighbour bonds (``NearestNextNearest``),
* Yukawa couplings ``exp(-mu |x|_1)`` (``Yukawa``),
* power laws ``|x|_1^(-s)`` (``PowerLaw``).

All distances are l1 distances.  A family is turned into a probability-like
coupling (``sum_x J_{0,x} = 1``) by :func:`normalize`.  Fourier transforms and
torus periodizations use exact closed forms: the Yukawa kernel factorizes over
coordinates, and the power law is a Gamma-weighted superposition of Yukawa
kernels, ``r^-s = Gamma(s)^-1 int_0^inf mu^(s-1) exp(-mu r) dmu``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np
from scipy import special

from .errors import NonSummable, ParameterOutOfRange, QuadratureFailure, TailTooHeavy


# ---------------------------------------------------------------------------
# family descriptions


@dataclass(frozen=True)
class NearestNextNearest:
    lam: float
    kappa: float = 0.0


@dataclass(frozen=True)
class Yukawa:
    mu: float


@dataclass(frozen=True)
class PowerLaw:
    s: float


@dataclass(frozen=True)
class Mixture:
    components: tuple  # of (variant, weight)


Variant = Union[NearestNextNearest, Yukawa, PowerLaw, Mixture]


@dataclass(frozen=True)
class CouplingFamily:
    """A coupling variant together with the lattice dimension."""

    variant: Variant
    d: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ParameterOutOfRange(f"dimension must be a positive integer, got {self.d}")
        for comp, w in self.components():
            _validate_component(comp, self.d)

    def components(self) -> list[tuple[Variant, float]]:
        """Flattened list of (simple variant, weight) pairs."""
        return _flatten(self.variant, 1.0)


def _flatten(variant, weight):
    if isinstance(variant, Mixture):
        if len(variant.components) == 0:
            raise ParameterOutOfRange("mixture needs at least one component")
        out = []
        total = 0.0
        for comp, w in variant.components:
            if not (w >= 0.0) or not math.isfinite(w):
                raise ParameterOutOfRange(f"mixture weights must be non-negative, got {w}")
            total += w
            out.extend(_flatten(comp, weight * w))
        if total <= 0.0:
            raise ParameterOutOfRange("mixture weights are all zero")
        return [(c, w) for c, w in out if w > 0.0]
    return [(variant, weight)]


def _validate_component(comp, d):
    if isinstance(comp, NearestNextNearest):
        if not comp.lam > 0:
            raise ParameterOutOfRange(f"lambda must be > 0, got {comp.lam}")
        if d == 1 and comp.kappa != 0.0:
            raise ParameterOutOfRange("next-nearest bonds do not exist in d = 1; kappa must be 0")
        if comp.lam < 2 * (d - 1) * abs(comp.kappa) * (1 - 1e-12):
            raise ParameterOutOfRange(
                f"reflection positivity needs lambda >= 2(d-1)|kappa|, got lambda={comp.lam}, kappa={comp.kappa}"
            )
    elif isinstance(comp, Yukawa):
        if not comp.mu > 0 or not math.isfinite(comp.mu):
            raise ParameterOutOfRange(f"Yukawa mu must be > 0, got {comp.mu}")
    elif isinstance(comp, PowerLaw):
        s = comp.s
        if not math.isfinite(s) or s <= d:
            raise NonSummable(f"power law needs s > d = {d}, got s = {s}")
        if d == 1 and s >= 2:
            raise ParameterOutOfRange(f"power law in d = 1 needs s < 2, got s = {s}")
        if d == 2 and s >= 4:
            raise ParameterOutOfRange(f"power law in d = 2 needs s < 4, got s = {s}")
    else:
        raise ParameterOutOfRange(f"unknown coupling variant {comp!r}")


# ---------------------------------------------------------------------------
# lattice shell counting


def shell_count_poly(d: int) -> list[np.ndarray]:
    """Per-k polynomial coefficients of the number of sites at l1 radius r.

    N_d(r) = sum_k 2^k C(d,k) C(r-1,k-1); the k-th entry holds the ascending
    power coefficients of 2^k C(d,k) C(r-1,k-1) as a polynomial in r.
    """
    polys = []
    for k in range(1, d + 1):
        # C(r-1, k-1) = prod_{i=1}^{k-1} (r - i) / (k-1)!
        p = np.polynomial.polynomial.polyfromroots(np.arange(1, k)) if k > 1 else np.array([1.0])
        polys.append(p * (2.0**k) * math.comb(d, k) / math.factorial(k - 1))
    return polys


def shell_count(d: int, r) -> np.ndarray:
    """Number of sites of Z^d at l1 distance r (r >= 1)."""
    r = np.asarray(r)
    total = np.zeros(r.shape, dtype=float)
    for k in range(1, d + 1):
        total = total + (2.0**k) * math.comb(d, k) * special.comb(r - 1, k - 1)
    return total


def _powerlaw_raw_sum(s: float, d: int) -> float:
    # sum_{r>=1} N_d(r) r^-s expanded into Riemann zeta values
    total = 0.0
    for p in shell_count_poly(d):
        for j, a in enumerate(p):
            if a != 0.0:
                total += a * special.zeta(s - j, 1)
    return float(total)


def _powerlaw_tail(s: float, d: int, R: float) -> float:
    # certified bound on sum_{r>R} N_d(r) r^-s using N_d(r) <= sum_k 2^k C(d,k) r^(k-1)/(k-1)!
    # and sum_{r>R} r^(k-1-s) <= R^(k-s)/(s-k)
    total = 0.0
    for k in range(1, d + 1):
        total += (2.0**k) * math.comb(d, k) / math.factorial(k - 1) * R ** (k - s) / (s - k)
    return total


def _yukawa_tail(mu: float, d: int, R: float) -> float:
    # same polynomial envelope, sum_{r>R} r^j e^{-mu r} <= int_R^inf t^j e^{-mu t} dt once decreasing
    total = 0.0
    for k in range(1, d + 1):
        j = k - 1
        integral = special.gammaincc(j + 1, mu * R) * math.gamma(j + 1) / mu ** (j + 1)
        total += (2.0**k) * math.comb(d, k) / math.factorial(j) * integral
    return total


def _component_raw_sum(comp, d: int) -> float:
    if isinstance(comp, NearestNextNearest):
        return 2 * d * comp.lam + 2 * d * (d - 1) * comp.kappa
    if isinstance(comp, Yukawa):
        return float(1.0 / np.tanh(comp.mu / 2.0) ** d - 1.0)
    return _powerlaw_raw_sum(comp.s, d)


def _component_radius(comp, d: int, tol: float) -> tuple[int, float]:
    """Smallest l1 radius whose remaining raw mass is certified below tol."""
    if isinstance(comp, NearestNextNearest):
        return 2, 0.0
    if isinstance(comp, Yukawa):
        tail = lambda R: _yukawa_tail(comp.mu, d, R)
        lo = max(1.0, (d - 1) / comp.mu)
    else:
        tail = lambda R: _powerlaw_tail(comp.s, d, R)
        lo = 1.0
    if tail(lo) <= tol:
        return int(math.ceil(lo)), tail(math.ceil(lo))
    hi = lo * 2
    while tail(hi) > tol:
        hi *= 2
        if hi > 1e300:
            raise NonSummable("tail bound cannot reach the requested tolerance")
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if tail(mid) > tol:
            lo = mid
        else:
            hi = mid
        if hi / lo < 1 + 1e-12:
            break
    R = math.ceil(hi)
    return int(R), tail(float(R))


@dataclass(frozen=True)
class NormalizedCoupling:
    """A coupling family scaled so that its couplings sum to one.

    Attributes
    ----------
    family : CouplingFamily
    norm_const : float
        Multiplier ``c`` with ``c * sum_{x != 0} J_raw(x) = 1``.
    truncation_radius : int
        l1 radius beyond which the certified remaining mass is ``tail_bound``.
    tail_bound : float
        Bound on ``sum_{|x|_1 > R} J_{0,x}``.
    """

    family: CouplingFamily
    norm_const: float
    truncation_radius: int
    tail_bound: float

    @property
    def d(self) -> int:
        return self.family.d

    def value(self, x) -> float:
        return coupling_value(self, x)

    def values(self, disp: np.ndarray) -> np.ndarray:
        """Couplings J_{0,x} for an array of displacements with shape (..., d)."""
        disp = np.asarray(disp)
        out = np.zeros(disp.shape[:-1])
        for comp, w in self.family.components():
            out = out + w * _raw_values(comp, disp)
        return self.norm_const * out

    def fourier(self, k) -> np.ndarray:
        return fourier(self, k)

    def deficit(self, k) -> np.ndarray:
        """``1 - J_hat(k)`` evaluated without cancellation near k = 0."""
        k = _as_k(k, self.d)
        out = np.zeros(k.shape[:-1])
        for comp, w in self.family.components():
            out = out + w * _raw_deficit(comp, k)
        return self.norm_const * out

    def l2(self) -> float:
        """sum_x J_{0,x}^2 from closed forms (no truncation)."""
        comps = self.family.components()
        total = 0.0
        for a, wa in comps:
            for b, wb in comps:
                total += wa * wb * _raw_inner(a, b, self.d)
        return self.norm_const**2 * total

    def infrared_exponent(self) -> float:
        """alpha with 1 - J_hat(k) ~ |k|^alpha near 0."""
        alpha = 2.0
        for comp, _ in self.family.components():
            if isinstance(comp, PowerLaw):
                alpha = min(alpha, comp.s - self.d)
        return alpha


def normalize(family: CouplingFamily, tol: float = 1e-10) -> NormalizedCoupling:
    """Compute the normalization constant and a certified truncation radius."""
    if not tol > 0:
        raise ParameterOutOfRange("tol must be positive")
    comps = family.components()
    raw = sum(w * _component_raw_sum(c, family.d) for c, w in comps)
    if not raw > 0 or not math.isfinite(raw):
        raise NonSummable(f"raw coupling sum is {raw}")
    c = 1.0 / raw
    R = 0
    tail = 0.0
    for comp, w in comps:
        r, _ = _component_radius(comp, family.d, tol / (len(comps) * c * w))
        R = max(R, r)
    for comp, w in comps:
        if isinstance(comp, Yukawa):
            tail += c * w * _yukawa_tail(comp.mu, family.d, float(R))
        elif isinstance(comp, PowerLaw):
            tail += c * w * _powerlaw_tail(comp.s, family.d, float(R))
    return NormalizedCoupling(family, c, R, tail)


# ---------------------------------------------------------------------------
# real space


def _raw_values(comp, disp: np.ndarray) -> np.ndarray:
    a = np.abs(np.asarray(disp, dtype=np.int64))
    l1 = a.sum(axis=-1)
    if isinstance(comp, NearestNextNearest):
        out = np.where(l1 == 1, comp.lam, 0.0)
        if disp.shape[-1] > 1:
            nnn = (l1 == 2) & (a.max(axis=-1) == 1)
            out = np.where(nnn, comp.kappa, out)
        return out
    with np.errstate(divide="ignore"):
        if isinstance(comp, Yukawa):
            out = np.exp(-comp.mu * l1)
        else:
            out = np.power(l1.astype(float), -comp.s)
    return np.where(l1 == 0, 0.0, out)


def coupling_value(nc: NormalizedCoupling, x: Sequence[int]) -> float:
    """J_{0,x}; zero at the origin."""
    x = np.asarray(x, dtype=np.int64).reshape(1, -1)
    if x.shape[1] != nc.d:
        raise ParameterOutOfRange(f"expected a {nc.d}-dimensional lattice vector")
    return float(nc.values(x)[0])


# ---------------------------------------------------------------------------
# Fourier space


def _as_k(k, d: int) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if k.ndim == 0:
        k = k.reshape(1)
    if k.shape[-1] != d:
        raise ParameterOutOfRange(f"wave vector must have {d} components")
    return k


def _one_minus_cos(k):
    return 2.0 * np.sin(0.5 * k) ** 2


def _yukawa_factor(mu, k):
    # P_mu(k) = sinh mu / (cosh mu - cos k), written with e^{-mu}
    e = np.exp(-mu)
    den = np.expm1(-mu) ** 2 + 2.0 * e * _one_minus_cos(k)
    return -np.expm1(-2.0 * mu) / den


def _yukawa_factor_drop(mu, k):
    # P_mu(0) - P_mu(k) >= 0
    e = np.exp(-mu)
    D = _one_minus_cos(k)
    den0 = np.expm1(-mu) ** 2
    denk = den0 + 2.0 * e * D
    # two ratios instead of one product keep tiny mu and D from underflowing
    return (-np.expm1(-2.0 * mu) / den0) * (2.0 * e * D / denk)


def _product_drop(mu, k, scale=1.0):
    """prod_j P(0) - prod_j P(k_j), telescoped; mu broadcasts against k[..., 0].

    Every factor is multiplied by ``scale``, so the result carries scale^d.
    """
    d = k.shape[-1]
    p0 = _yukawa_factor(mu, 0.0) * scale
    pk = [_yukawa_factor(mu, k[..., j]) * scale for j in range(d)]
    total = 0.0
    for j in range(d):
        term = _yukawa_factor_drop(mu, k[..., j]) * scale * p0 ** (d - 1 - j)
        for i in range(j):
            term = term * pk[i]
        total = total + term
    return total


# Gauss-Legendre panels in log(mu) for the power-law superposition
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_PANELS_PER_E = 1.5  # panels per unit of log(mu)


def _log_mu_rule(mu0: float, mu1: float, order: int = 16):
    t0, t1 = math.log(mu0), math.log(mu1)
    n = max(4, int(math.ceil((t1 - t0) * _PANELS_PER_E)))
    if order == 16:
        x, w = _GL_NODES, _GL_WEIGHTS
    else:
        x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(t0, t1, n + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    t = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wt = (half[:, None] * w[None, :]).ravel()
    mu = np.exp(t)
    return mu, wt * mu  # dmu = mu dt


def _mu_max(s: float) -> float:
    return 60.0 + 4.0 * s


def _powerlaw_deficit(s: float, k: np.ndarray, chunk: int = 2048, check: bool = True) -> np.ndarray:
    """Gamma(s)^-1 int mu^(s-1) [prod P_mu(0) - prod P_mu(k)] dmu for each row of k."""
    d = k.shape[-1]
    flat = k.reshape(-1, d)
    out = np.empty(flat.shape[0])
    D = _one_minus_cos(flat)
    nonzero = np.where(D > 0, D, np.inf)
    Dmin = nonzero.min(axis=1)
    for start in range(0, flat.shape[0], chunk):
        sl = slice(start, start + chunk)
        kk = flat[sl]
        Dm = Dmin[sl]
        zero = ~np.isfinite(Dm)
        # common small-mu cutoff for the chunk keeps one quadrature rule
        dmin = np.min(np.where(zero, 1.0, Dm))
        if dmin < 1e-280:
            raise QuadratureFailure("wave-vector components below ~1e-140 are not resolved")
        mu0 = 1e-3 * min(1.0, math.sqrt(dmin))
        vals = _powerlaw_deficit_chunk(s, kk, mu0, 16)
        if check:
            coarse = _powerlaw_deficit_chunk(s, kk, mu0, 10)
            err = np.abs(vals - coarse)
            if np.any(err > 1e-9 * np.maximum(1.0, np.abs(vals))) or not np.all(np.isfinite(vals)):
                raise QuadratureFailure(f"power-law mu-integral unresolved (max err {err.max():.3e})")
        vals[zero] = 0.0
        out[sl] = vals
    return out.reshape(k.shape[:-1])


def _powerlaw_deficit_chunk(s, kk, mu0, order):
    d = kk.shape[-1]
    mu, w = _log_mu_rule(mu0, _mu_max(s), order)
    # factors scaled by mu stay O(1) as mu -> 0; mu^-d moves into the weights
    drop = _product_drop(mu[None, :], kk[:, None, :], scale=mu[None, :])
    body = (drop * (w * mu ** (s - 1.0 - d))[None, :]).sum(axis=1)
    # analytic panel on (0, mu0): expansions to relative order mu^2
    small = 2.0**d * (mu0 ** (s - d) / (s - d) + (d / 12.0) * mu0 ** (s - d + 2) / (s - d + 2))
    D = _one_minus_cos(kk)
    iszero = D == 0
    Dsafe = np.where(iszero, 1.0, D)
    # amplitude prod 1/D overflows for several tiny components; combine with mu0 powers in logs
    log_amp = np.sum(np.where(iszero, math.log(2.0), -np.log(Dsafe)), axis=1)
    expo = np.sum(np.where(iszero, -1.0, 1.0), axis=1)
    lead = np.exp(log_amp + (s + expo) * math.log(mu0))
    corr = np.sum(np.where(iszero, mu0**2 / 12.0, mu0**2 / 6.0 - 0.5 * mu0**2 / Dsafe), axis=1)
    small_k = lead * (1.0 / (s + expo) + corr / (s + expo + 2))
    return (body + small - small_k) / math.gamma(s)


def _raw_deficit(comp, k: np.ndarray) -> np.ndarray:
    d = k.shape[-1]
    D = _one_minus_cos(k)
    if isinstance(comp, NearestNextNearest):
        out = 2.0 * comp.lam * D.sum(axis=-1)
        if d > 1 and comp.kappa != 0.0:
            pair = 0.0
            for i in range(d):
                for j in range(i + 1, d):
                    pair = pair + D[..., i] + D[..., j] - D[..., i] * D[..., j]
            out = out + 4.0 * comp.kappa * pair
        return out
    if isinstance(comp, Yukawa):
        return _product_drop(comp.mu, k)
    return _powerlaw_deficit(comp.s, k)


def fourier(nc: NormalizedCoupling, k) -> np.ndarray:
    """J_hat(k) = sum_x J_{0,x} e^{i k.x}; real because J is even.

    Accepts a single wave vector or an array of shape (..., d).
    """
    k = _as_k(k, nc.d)
    out = 1.0 - nc.deficit(k)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# l2 inner products of raw families


def _raw_inner(a, b, d: int) -> float:
    if isinstance(b, NearestNextNearest) and not isinstance(a, NearestNextNearest):
        a, b = b, a
    if isinstance(a, NearestNextNearest):
        nn, nnn = 2 * d, 2 * d * (d - 1)
        if isinstance(b, NearestNextNearest):
            return nn * a.lam * b.lam + nnn * a.kappa * b.kappa
        v1 = _raw_values(b, np.array([[1] + [0] * (d - 1)]))[0]
        v2 = _raw_values(b, np.array([[1, 1] + [0] * (d - 2)]))[0] if d > 1 else 0.0
        return nn * a.lam * v1 + nnn * a.kappa * v2
    if isinstance(a, Yukawa) and isinstance(b, Yukawa):
        return float(1.0 / np.tanh((a.mu + b.mu) / 2.0) ** d - 1.0)
    if isinstance(a, PowerLaw) and isinstance(b, PowerLaw):
        return _powerlaw_raw_sum(a.s + b.s, d)
    y, p = (a, b) if isinstance(a, Yukawa) else (b, a)
    # sum_r N_d(r) e^{-mu r} r^{-s}; terms decay geometrically
    rmax = int(math.ceil((40.0 + d * 10) / y.mu)) + 10
    r = np.arange(1, rmax + 1, dtype=float)
    return float(np.sum(shell_count(d, r) * np.exp(-y.mu * r) * r ** (-p.s)))


# ---------------------------------------------------------------------------
# torus periodization


@dataclass(frozen=True)
class TorusKernel:
    """Periodized couplings on the torus (Z/LZ)^d.

    ``row[y]`` is the image sum of J over displacements congruent to y; the
    entry at y = 0 collects the self-images.  ``fourier_row`` is its discrete
    Fourier transform on the reciprocal torus.
    """

    L: int
    d: int
    row: np.ndarray
    fourier_row: np.ndarray = field(repr=False)

    def dump(self, path) -> None:
        """Write the row as little-endian float64 in row-major displacement order."""
        with open(path, "wb") as fh:
            fh.write(np.ascontiguousarray(self.row, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path, L: int, d: int) -> "TorusKernel":
        raw = np.fromfile(path, dtype="<f8")
        if raw.size != L**d:
            raise ParameterOutOfRange(f"file holds {raw.size} entries, expected {L**d}")
        row = raw.reshape((L,) * d).astype(float)
        return cls(L, d, row, np.fft.fftn(row).real)

    def infrared_sum(self) -> float:
        """Torus analogue of the infrared integral: mean over k != 0 of J_hat^2/(1-J_hat)."""
        fr = self.fourier_row.ravel()[1:]
        return float(np.sum(fr**2 / (1.0 - fr)) / self.row.size)


def _torus_grid(L: int, d: int) -> np.ndarray:
    axes = np.meshgrid(*([np.arange(L)] * d), indexing="ij")
    return np.stack(axes, axis=-1)


def _image_factor(mu, y, L):
    # sum_z e^{-mu |y + L z|} for 0 <= y < L
    return (np.exp(-mu * y) + np.exp(-mu * (L - y))) / (-np.expm1(-mu * L))


def _yukawa_row(mu, L, d):
    y = _torus_grid(L, d)
    prod = np.prod(_image_factor(mu, y, L), axis=-1)
    prod[(0,) * d] -= 1.0
    return prod


def _powerlaw_row(s, L, d, order=16):
    y = _torus_grid(L, d).reshape(-1, d).astype(float)
    mu0 = 1e-4 / L
    mu, w = _log_mu_rule(mu0, _mu_max(s), order)
    row = np.empty(y.shape[0])
    wt = w * mu ** (s - 1.0)
    for start in range(0, y.shape[0], 1024):
        yy = y[start:start + 1024]
        prod = np.prod(_image_factor(mu[None, :, None], yy[:, None, :], L), axis=-1)
        row[start:start + 1024] = prod @ wt
    # origin: subtract the bare site, prod - 1 = expm1(d log1p(u))
    u = 2.0 * np.exp(-mu * L) / (-np.expm1(-mu * L))
    row[0] = np.sum(np.expm1(d * np.log1p(u)) * wt)
    # analytic panel on (0, mu0): p ~ 2/(mu L) (1 + mu^2 (a^2/2 - L^2/24)), a = L/2 - y
    amp = (2.0 / L) ** d
    corr = np.sum(0.5 * (0.5 * L - y) ** 2 - L * L / 24.0, axis=1)
    small = amp * (mu0 ** (s - d) / (s - d) + corr * mu0 ** (s - d + 2) / (s - d + 2))
    small[0] -= mu0**s / s
    row = (row + small) / math.gamma(s)
    return row.reshape((L,) * d)


def _nn_row(comp, L, d):
    row = np.zeros((L,) * d)
    for j in range(d):
        for sgn in (1, -1):
            idx = [0] * d
            idx[j] = sgn % L
            row[tuple(idx)] += comp.lam
    for i in range(d):
        for j in range(i + 1, d):
            for si in (1, -1):
                for sj in (1, -1):
                    idx = [0] * d
                    idx[i] = si % L
                    idx[j] = sj % L
                    row[tuple(idx)] += comp.kappa
    return row


def periodize(nc: NormalizedCoupling, L: int, tol: float = 1e-9) -> TorusKernel:
    """Wrap the coupling onto the torus of side L.

    Image sums are evaluated in closed form (Yukawa) or through the exact
    mu-superposition (power law), so no real-space truncation is involved.
    The Fourier identity ``J_hat^(L)(k) = J_hat(k)`` on the reciprocal torus is
    checked to ``tol`` and a failure raises ``TailTooHeavy``.
    """
    if int(L) != L or L < 4 or L % 2:
        raise ParameterOutOfRange(f"L must be an even integer >= 4, got {L}")
    d = nc.d
    row = np.zeros((L,) * d)
    for comp, w in nc.family.components():
        if isinstance(comp, NearestNextNearest):
            part = _nn_row(comp, L, d)
        elif isinstance(comp, Yukawa):
            part = _yukawa_row(comp.mu, L, d)
        else:
            part = _powerlaw_row(comp.s, L, d)
        row += w * part
    row *= nc.norm_const
    fr = np.fft.fftn(row).real
    kgrid = 2.0 * np.pi * _torus_grid(L, d) / L
    exact = fourier(nc, kgrid.reshape(-1, d)).reshape((L,) * d)
    err = float(np.max(np.abs(fr - exact)))
    if err > tol or abs(row.sum() - 1.0) > tol:
        raise TailTooHeavy(f"periodized kernel misses the Fourier identity by {err:.3e} (tol {tol:.1e})")
    return TorusKernel(int(L), d, row, fr)


# ---------------------------------------------------------------------------
# reflection positivity


def rp_quadratic_form(nc: NormalizedCoupling, f: Mapping[tuple, float], direction: int) -> float:
    """Cross-plane quadratic form for the reflection through the plane x_l = 1/2.

    ``f`` maps lattice sites of the half space {x_l >= 1} to reals;
    ``direction`` is 1-based.  Returns
    ``sum_{x in H, y not in H} J_{x,y} f(x) f(theta y)``.
    """
    d = nc.d
    if not 1 <= direction <= d:
        raise ParameterOutOfRange(f"direction must be in 1..{d}")
    items = [(tuple(int(c) for c in x), float(v)) for x, v in f.items() if v != 0.0]
    if not items:
        return 0.0
    X = np.array([x for x, _ in items], dtype=np.int64)
    F = np.array([v for _, v in items])
    ax = direction - 1
    if np.any(X[:, ax] < 1):
        raise ParameterOutOfRange("f must be supported on the half space x_l >= 1")
    Y = X.copy()
    Y[:, ax] = 1 - Y[:, ax]
    J = nc.values(X[:, None, :] - Y[None, :, :])
    return float(F @ J @ F)


def family_from_spec(name: str, d: int, **params) -> CouplingFamily:
    """Build a family from a name and keyword parameters (used by the CLI)."""
    name = name.lower().replace("-", "").replace("_", "")
    if name in ("nn", "nnn", "nearest", "nearestnextnearest"):
        return CouplingFamily(NearestNextNearest(float(params.get("lam", 1.0)), float(params.get("kappa", 0.0))), d)
    if name == "yukawa":
        return CouplingFamily(Yukawa(float(params["mu"])), d)
    if name in ("powerlaw", "power"):
        return CouplingFamily(PowerLaw(float(params["s"])), d)
    raise ParameterOutOfRange(f"unknown coupling family {name!r}")


def random_half_space_function(d: int, direction: int, rng: np.random.Generator,
                               n_sites: int = 8, depth: int = 4, width: int = 3) -> dict:
    """Random finitely supported function on {x_l >= 1} with Gaussian values."""
    ax = direction - 1
    f = {}
    for _ in range(n_sites):
        x = rng.integers(-width, width + 1, size=d)
        x[ax] = rng.integers(1, depth + 1)
        f[tuple(int(c) for c in x)] = float(rng.standard_normal())
    return f
