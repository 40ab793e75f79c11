"""Carleman weight family for the degenerate coupled system.

Built in layers:

  * spatial core psi: integral of y/a(y) from the degeneracy point on the
    left of the inner observation interval, its negative counterpart on the
    right, joined by a quintic C^2 blend;
  * eta = exp(lam (|psi|_inf + psi)) and the positive ratio
    beta(x) = exp(3 lam |psi|_inf)/eta - 1, so the singular weight factors
    as A = -beta zeta;
  * temporal weights theta = 1/[t(T-t)]^4 and the smooth completion m(t)
    with m(0) > 0, tau = 1/m, giving sigma/phi (theta-based) and zeta/A
    (tau-based);
  * the rho family rho = e^{-sA} zeta^{-k} and its regularized counterpart
    with A_n = A (T-t)^4 / ((T-t)^4 + 1/n) and the on/off-support factor
    m_n.

Every weight is also exposed in log space (store -sA and the zeta exponent)
because e^{-sA} overflows double precision well before t = T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConstructionError, SingularEvaluationError
from .report import AuditReport

__all__ = [
    "PsiCore", "SpatialWeight", "TemporalWeight", "CarlemanWeights",
    "RhoFamily", "RegularizedWeights", "WeightRecord", "RhoRecord",
    "RegularizedRecord", "build_psi", "build_spatial", "build_temporal",
    "build_carleman_weights", "eval_carleman_weights", "eval_rho_family",
    "eval_regularized", "weight_bounds_check", "suggest_s",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


class _CumulativeIntegral:
    """Cumulative integral of a smooth positive integrand over [a, b],
    composite 8-point Gauss-Legendre with per-cell tails.

    grade > 1 packs cells toward the left endpoint (the integrand y/a(y)
    has unbounded derivatives at the degeneracy point even though its
    value tends to zero)."""

    def __init__(self, f, a, b, n_cells, grade: float = 1.0):
        self.f = f
        if grade == 1.0:
            self.nodes = np.linspace(a, b, n_cells + 1)
        else:
            u = np.linspace(0.0, 1.0, n_cells + 1)
            self.nodes = a + (b - a) * u ** grade
        mid = 0.5 * (self.nodes[:-1] + self.nodes[1:])
        half = 0.5 * np.diff(self.nodes)
        pts = mid[:, None] + half[:, None] * _GL_NODES[None, :]
        vals = f(pts)
        cell = (half[:, None] * _GL_WEIGHTS[None, :] * vals).sum(axis=1)
        self.cum = np.concatenate([[0.0], np.cumsum(cell)])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        idx = np.clip(np.searchsorted(self.nodes, x, side="right") - 1,
                      0, len(self.nodes) - 2)
        x0 = self.nodes[idx]
        half = 0.5 * (x - x0)
        pts = (x0 + half)[:, None] + half[:, None] * _GL_NODES[None, :]
        tail = (half[:, None] * _GL_WEIGHTS[None, :] * self.f(pts)).sum(axis=1)
        out = self.cum[idx] + tail
        return out[0] if scalar else out


def _quintic_coeffs(p0, m0, c0, p1, m1, c1, L):
    """Monomial coefficients (in u = (x-x0)/L) of the quintic matching
    value/1st/2nd derivatives at both ends."""
    b = np.array([p0, m0 * L, c0 * L * L, p1, m1 * L, c1 * L * L])
    A = np.zeros((6, 6))
    A[0, 0] = 1.0
    A[1, 1] = 1.0
    A[2, 2] = 2.0
    A[3] = 1.0
    A[4] = [0, 1, 2, 3, 4, 5]
    A[5] = [0, 0, 2, 6, 12, 20]
    return np.linalg.solve(A, b)


@dataclass(frozen=True)
class PsiCore:
    """The C^2 spatial profile psi and its first two derivatives."""

    psi: Callable
    dpsi: Callable
    d2psi: Callable
    psi_sup: float           # |psi|_inf on [0,1]
    omega_prime: tuple


def build_psi(coefficient, omega_prime, quad_nodes: int = 1024) -> PsiCore:
    """Spatial core: psi = +int_0^x y/a on [0, a'), psi = -int_{b'}^x y/a on
    [b', 1], quintic two-point blend in between (minimal degree meeting the
    six C^2 matching conditions)."""
    if quad_nodes < 64:
        raise ValueError("quad_nodes must be at least 64")
    ap, bp = omega_prime
    if not 0.0 < ap < bp < 1.0:
        raise ValueError("omega_prime must be strictly inside (0,1)")
    a_fn, da_fn = coefficient.a, coefficient.da

    def integrand(y):
        y = np.asarray(y, dtype=float)
        av = np.asarray(a_fn(y), dtype=float)
        if np.any(av[y > 0] <= 0):
            raise ConstructionError("coefficient vanishes away from x = 0; "
                                    "y/a(y) is not integrable there")
        with np.errstate(invalid="ignore", divide="ignore"):
            out = y / av
        # y/a(y) -> 0 as y -> 0 under the weak-degeneracy bound
        return np.where(y > 0, out, 0.0)

    left = _CumulativeIntegral(integrand, 0.0, ap, quad_nodes, grade=3.0)
    right = _CumulativeIntegral(integrand, bp, 1.0, quad_nodes)

    def ratio(x):          # psi' on the left branch
        return x / np.asarray(a_fn(x), dtype=float)

    def dratio(x):         # psi'' on the left branch
        av = np.asarray(a_fn(x), dtype=float)
        dav = np.asarray(da_fn(x), dtype=float)
        return (av - x * dav) / (av * av)

    L = bp - ap
    coef = _quintic_coeffs(left(ap), ratio(ap), dratio(ap),
                           0.0, -ratio(bp), -dratio(bp), L)
    dcoef = np.polynomial.polynomial.polyder(coef)
    d2coef = np.polynomial.polynomial.polyder(coef, 2)
    polyval = np.polynomial.polynomial.polyval

    def psi(x):
        x = np.asarray(x, dtype=float)
        x1 = np.atleast_1d(x)
        lo = x1 < ap
        hi = x1 > bp
        mid = ~(lo | hi)
        out = np.empty_like(x1)
        out[lo] = left(x1[lo])
        out[hi] = -right(x1[hi])
        out[mid] = polyval((x1[mid] - ap) / L, coef)
        return out.reshape(np.shape(x)) if np.shape(x) else float(out[0])

    def dpsi(x):
        x = np.asarray(x, dtype=float)
        x1 = np.atleast_1d(x)
        lo = x1 < ap
        hi = x1 > bp
        mid = ~(lo | hi)
        out = np.empty_like(x1)
        out[lo] = ratio(x1[lo])
        out[hi] = -ratio(x1[hi])
        out[mid] = polyval((x1[mid] - ap) / L, dcoef) / L
        return out.reshape(np.shape(x)) if np.shape(x) else float(out[0])

    def d2psi(x):
        x = np.asarray(x, dtype=float)
        x1 = np.atleast_1d(x)
        lo = x1 < ap
        hi = x1 > bp
        mid = ~(lo | hi)
        out = np.empty_like(x1)
        out[lo] = dratio(x1[lo])
        out[hi] = -dratio(x1[hi])
        out[mid] = polyval((x1[mid] - ap) / L, d2coef) / (L * L)
        return out.reshape(np.shape(x)) if np.shape(x) else float(out[0])

    psi_sup = _sup_abs(psi, 0.0, 1.0)
    return PsiCore(psi=psi, dpsi=dpsi, d2psi=d2psi, psi_sup=psi_sup,
                   omega_prime=(ap, bp))


def _sup_abs(f, a, b, n=4096):
    """Dense sampling plus golden-section refinement around the maximizer
    of |f| (smooth, unimodal per branch)."""
    xs = np.linspace(a, b, n + 1)
    vals = np.abs(f(xs))
    i = int(np.argmax(vals))
    lo = xs[max(i - 1, 0)]
    hi = xs[min(i + 1, n)]
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    c = hi - inv_phi * (hi - lo)
    d = lo + inv_phi * (hi - lo)
    fc, fd = abs(float(f(c))), abs(float(f(d)))
    for _ in range(80):
        if hi - lo < 1e-14:
            break
        if fc > fd:
            hi, d, fd = d, c, fc
            c = hi - inv_phi * (hi - lo)
            fc = abs(float(f(c)))
        else:
            lo, c, fc = c, d, fd
            d = lo + inv_phi * (hi - lo)
            fd = abs(float(f(d)))
    return max(float(vals[i]), fc, fd)


@dataclass(frozen=True)
class SpatialWeight:
    """psi together with lam, eta = exp(lam(|psi|_inf + psi)), the positive
    ratio beta = exp(3 lam |psi|_inf)/eta - 1 and its bounds."""

    core: PsiCore
    lam: float
    beta0: float             # min beta over [0,1]
    beta1: float             # max beta over [0,1]
    eta_inf: float           # max eta
    eta_min: float
    abar: float              # max over x of the (negative) A-factor eta - e^{3 lam |psi|_inf}

    @property
    def psi_sup(self):
        return self.core.psi_sup

    def eta(self, x):
        return np.exp(self.lam * (self.core.psi_sup + np.asarray(self.core.psi(x))))

    def beta(self, x):
        return np.expm1(self.lam * (2.0 * self.core.psi_sup - np.asarray(self.core.psi(x))))

    def a_factor(self, x):
        """eta - exp(3 lam |psi|_inf) < 0; A = tau * a_factor = -beta zeta."""
        ps = self.core.psi_sup
        return (np.exp(self.lam * (ps + np.asarray(self.core.psi(x))))
                - math.exp(3.0 * self.lam * ps))


def build_spatial(core: PsiCore, lam: Optional[float] = None,
                  min_beta: float = 0.1) -> SpatialWeight:
    """Attach lam.  When lam is None, scan {1, 2, 4, ...} for the smallest
    value giving min beta >= min_beta (the paper's lam is non-constructive)."""
    xs = np.linspace(0.0, 1.0, 2049)
    psi_vals = np.asarray(core.psi(xs))
    if lam is None:
        lam = 1.0
        for _ in range(24):
            beta_min = float(np.min(np.expm1(lam * (2 * core.psi_sup - psi_vals))))
            if beta_min >= min_beta:
                break
            lam *= 2.0
        else:
            raise ConstructionError("could not find lam with min beta >= min_beta")
    beta_vals = np.expm1(lam * (2 * core.psi_sup - psi_vals))
    eta_vals = np.exp(lam * (core.psi_sup + psi_vals))
    afac = eta_vals - math.exp(3 * lam * core.psi_sup)
    return SpatialWeight(core=core, lam=float(lam),
                         beta0=float(np.min(beta_vals)),
                         beta1=float(np.max(beta_vals)),
                         eta_inf=float(np.max(eta_vals)),
                         eta_min=float(np.min(eta_vals)),
                         abar=float(np.max(afac)))


@dataclass(frozen=True)
class TemporalWeight:
    """theta(t) = 1/[t(T-t)]^4 and the smooth completion m with
    m >= t^4 (T-t)^4 on (0, T/2], equality on [T/2, T] and m(0) > 0."""

    T: float
    m_max: float
    m0: float

    def theta(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return 1.0 / (t * (self.T - t)) ** 4

    def m(self, t):
        t = np.asarray(t, dtype=float)
        base = (t * (self.T - t)) ** 4
        s = 2.0 * t / self.T
        with np.errstate(divide="ignore", over="ignore"):
            arg = 1.0 - 1.0 / (1.0 - s * s)
        bump = np.where(s < 1.0, np.exp(np.where(s < 1.0, arg, -np.inf)), 0.0)
        return base + (self.T / 2.0) ** 8 * bump

    def tau(self, t):
        with np.errstate(divide="ignore"):
            return 1.0 / self.m(t)

    def log_m(self, t):
        with np.errstate(divide="ignore"):
            return np.log(self.m(t))


def build_temporal(T: float) -> TemporalWeight:
    if T <= 0:
        raise ValueError("final time must be positive")
    probe = TemporalWeight(T=T, m_max=math.nan, m0=math.nan)
    ts = np.linspace(0.0, T, 8193)
    mv = probe.m(ts)
    return TemporalWeight(T=T, m_max=float(np.max(mv)), m0=float(probe.m(0.0)))


@dataclass(frozen=True)
class WeightRecord:
    theta: float
    sigma: float
    phi: float
    tau: float
    zeta: float
    A: float
    eta: float


@dataclass(frozen=True)
class RhoRecord:
    rho: float
    rho0: float
    rho_hat: float
    rho_star: float
    log_rho: float
    log_rho0: float
    log_rho_hat: float
    log_rho_star: float


@dataclass(frozen=True)
class RegularizedRecord:
    A_n: float
    rho_n: float
    rho0_n: float
    rho_star_n: float
    m_n: float
    log_rho_n: float
    log_rho0_n: float
    log_rho_star_n: float


@dataclass(frozen=True)
class CarlemanWeights:
    """sigma = theta eta, phi = theta (eta - e^{3 lam |psi|_inf}),
    zeta = tau eta, A = tau (eta - e^{3 lam |psi|_inf}) and the Carleman
    parameter s."""

    spatial: SpatialWeight
    temporal: TemporalWeight
    s: float

    @property
    def T(self):
        return self.temporal.T

    @property
    def lam(self):
        return self.spatial.lam

    def with_s(self, s: float) -> "CarlemanWeights":
        return CarlemanWeights(spatial=self.spatial, temporal=self.temporal, s=float(s))

    # -- batch evaluators (broadcast t against x) -------------------------

    def sigma(self, t, x):
        return self.temporal.theta(t) * self.spatial.eta(x)

    def phi(self, t, x):
        return self.temporal.theta(t) * self.spatial.a_factor(x)

    def zeta(self, t, x):
        return self.temporal.tau(t) * self.spatial.eta(x)

    def A(self, t, x):
        return self.temporal.tau(t) * self.spatial.a_factor(x)

    def log_zeta(self, t, x):
        lz = (self.spatial.lam * (self.spatial.psi_sup
                                  + np.asarray(self.spatial.core.psi(x)))
              - self.temporal.log_m(t))
        return lz

    def neg_sA(self, t, x):
        """-s A = s beta zeta >= 0, the log of rho."""
        return -self.s * self.A(t, x)

    def rho_family(self) -> "RhoFamily":
        return RhoFamily(weights=self)


def build_carleman_weights(coefficient, omega_prime, T, *, s: float = 1.0,
                           lam: Optional[float] = None, quad_nodes: int = 1024,
                           min_beta: float = 0.1) -> CarlemanWeights:
    core = build_psi(coefficient, omega_prime, quad_nodes)
    spatial = build_spatial(core, lam=lam, min_beta=min_beta)
    temporal = build_temporal(T)
    return CarlemanWeights(spatial=spatial, temporal=temporal, s=float(s))


def eval_carleman_weights(w: CarlemanWeights, t: float, x: float) -> WeightRecord:
    """Point evaluation of the full weight record.

    theta-based values need t strictly inside (0, T); tau-based values need
    t in [0, T).  Singular requests raise."""
    T = w.T
    if not 0.0 < t < T:
        raise SingularEvaluationError(
            f"theta-based weights are singular at t = {t} (need 0 < t < {T})")
    eta = float(w.spatial.eta(x))
    theta = float(w.temporal.theta(t))
    tau = float(w.temporal.tau(t))
    afac = float(w.spatial.a_factor(x))
    return WeightRecord(theta=theta, sigma=theta * eta, phi=theta * afac,
                        tau=tau, zeta=tau * eta, A=tau * afac, eta=eta)


@dataclass(frozen=True)
class RhoFamily:
    """rho = e^{-sA}, rho0 = e^{-sA} zeta^{-1}, rho_hat = e^{-sA} zeta^{-5/2},
    rho_star = e^{-sA} zeta^{-4}; algebraically rho_hat^2 = rho_star rho0.

    The state-weight exponent of rho0 here is -1 exactly as in the limit
    functional; the regularized family uses exponent -2 (see
    RegularizedWeights.state_exponent)."""

    weights: CarlemanWeights
    state_exponent: int = -1

    def logs(self, t, x):
        neg_sA = self.weights.neg_sA(t, x)
        log_zeta = self.weights.log_zeta(t, x)
        return (neg_sA, neg_sA - log_zeta, neg_sA - 2.5 * log_zeta,
                neg_sA - 4.0 * log_zeta)


def eval_rho_family(w: CarlemanWeights, t: float, x: float) -> RhoRecord:
    """Point values of the rho family; t = T is singular (rho0 blows up)."""
    if not 0.0 <= t < w.T:
        raise SingularEvaluationError(
            f"rho family is singular at t = {t} (need 0 <= t < {w.T})")
    lr, l0, lh, ls = RhoFamily(weights=w).logs(t, x)
    with np.errstate(over="ignore"):
        return RhoRecord(rho=float(np.exp(lr)), rho0=float(np.exp(l0)),
                         rho_hat=float(np.exp(lh)), rho_star=float(np.exp(ls)),
                         log_rho=float(lr), log_rho0=float(l0),
                         log_rho_hat=float(lh), log_rho_star=float(ls))


@dataclass(frozen=True)
class RegularizedWeights:
    """A_n = A (T-t)^4 / ((T-t)^4 + 1/n) with rho_n = e^{-s A_n},
    rho_{0,n} = rho_n zeta^{-2}, rho_{*,n} = rho_n zeta^{-4} m_n where
    m_n = 1 on omega and n off omega.  Finite on all of [0,T] x [0,1]."""

    weights: CarlemanWeights
    n: float
    omega: tuple
    state_exponent: int = -2

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("penalty index n must be >= 1")

    def _g(self, t):
        """(T-t)^4 / (m(t) ((T-t)^4 + 1/n)); on [T/2, T] the factor
        (T-t)^4/m cancels to 1/t^4 exactly, which keeps t = T finite."""
        t = np.asarray(t, dtype=float)
        T = self.weights.T
        r4 = (T - t) ** 4
        den = r4 + 1.0 / self.n
        late = 1.0 / (np.maximum(t, T / 2.0) ** 4 * den)
        with np.errstate(divide="ignore", invalid="ignore"):
            early = r4 / (self.weights.temporal.m(t) * den)
        return np.where(t >= T / 2.0, late, early)

    def A_n(self, t, x):
        """Broadcasts t against x (reshape for tensor grids)."""
        return self._g(t) * self.weights.spatial.a_factor(x)

    def m_n(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.omega
        return np.where((x > lo) & (x < hi), 1.0, float(self.n))

    def logs(self, t, x):
        """(-s A_n, log rho_{0,n}, log(rho_{*,n}/m_n)) broadcast over t, x."""
        neg_sAn = -self.weights.s * self.A_n(t, x)
        log_zeta = self.weights.log_zeta(t, x)
        return neg_sAn, neg_sAn - 2.0 * log_zeta, neg_sAn - 4.0 * log_zeta


def eval_regularized(rw: RegularizedWeights, t: float, x: float) -> RegularizedRecord:
    """Point values of the regularized family, finite including t = T where
    A_n(T,x) = -n beta(x) eta(x) / T^4 and the zeta^{-k} factors vanish."""
    if not 0.0 <= t <= rw.weights.T:
        raise ValueError(f"t = {t} outside [0, {rw.weights.T}]")
    neg_sAn, l0, ls = rw.logs(t, x)
    mn = float(rw.m_n(x))
    ls = ls + math.log(mn)
    with np.errstate(over="ignore"):
        return RegularizedRecord(A_n=float(-neg_sAn / rw.weights.s),
                                 rho_n=float(np.exp(neg_sAn)),
                                 rho0_n=float(np.exp(l0)),
                                 rho_star_n=float(np.exp(ls)),
                                 m_n=mn,
                                 log_rho_n=float(neg_sAn),
                                 log_rho0_n=float(l0),
                                 log_rho_star_n=float(ls))


def weight_bounds_check(rw: RegularizedWeights, t_nodes, x_nodes) -> AuditReport:
    """Sandwich audit 0 < C_T <= rho_{0,n} <= C_{n,T} (and the same for
    rho_{*,n}/m_n) over a probe grid, in log space.

    The n-independent lower constant is recomputed from the proof chain
    e^z >= z^p / p! with z = -s A_n pointwise (p = 3 for the zeta^{-2}
    weight, p = 5 for zeta^{-4}), together with 1/M_T^2 on [0, T/2]; the
    n-dependent upper constant uses the bracket
    -A_n <= 16 beta1 |eta|_inf n / T^4 on [T/2, T] and -A_n <= beta1 M_T
    before T/2.  The quoted headline constant with beta0 alone is also
    reported.  Grid values at t = T are excluded from the lower comparison
    when present (the regularized weights vanish there identically).
    """
    w = rw.weights
    s, T = w.s, w.T
    t = np.asarray(t_nodes, dtype=float)
    x = np.asarray(x_nodes, dtype=float)
    interior = t < T
    tt = t[interior]

    neg_sAn = -s * np.multiply.outer(rw._g(tt), w.spatial.a_factor(x))
    log_zeta = (w.spatial.lam * (w.spatial.psi_sup + np.asarray(w.spatial.core.psi(x)))[None, :]
                - w.temporal.log_m(tt)[:, None])
    log_rho0n = neg_sAn - 2.0 * log_zeta
    log_rho_star_n = neg_sAn - 4.0 * log_zeta

    # zeta bounds: m_T over all of [0,T], M_T over [0,T/2] only.
    m_T = w.spatial.eta_min / w.temporal.m_max
    half = tt <= T / 2.0
    with np.errstate(divide="ignore"):
        M_T = float(np.max(np.exp(log_zeta[half])) if np.any(half)
                    else w.spatial.eta_inf / w.temporal.m0)

    def chain_lower(log_w, p):
        # e^z z^{-0} >= z^p/p! route, applied pointwise where it is sharper
        # than the plain [0,T/2] bound 1/M_T^(p-1)... both in log space.
        z = np.maximum(neg_sAn, 1e-300)
        fact = math.lgamma(p + 1)
        chain = p * np.log(z) - fact + (log_w - neg_sAn)   # log(z^p/p! * zeta^{-k})
        flat = -(p - 1.0) * math.log(M_T)                  # 1/M_T^{p-1} on [0,T/2]
        val = np.where(half[:, None], np.maximum(chain, flat), chain)
        return float(np.min(val))

    lower0 = chain_lower(log_rho0n, 3)
    lower_star = chain_lower(log_rho_star_n, 5)
    log_C_nT = s * w.spatial.beta1 * max(M_T, 16.0 * w.spatial.eta_inf * float(rw.n) / T ** 4) \
        - 2.0 * math.log(m_T)

    obs = {
        "log_min_rho0n": float(np.min(log_rho0n)),
        "log_max_rho0n": float(np.max(log_rho0n)),
        "log_min_rho_star_n": float(np.min(log_rho_star_n)),
        "log_max_rho_star_n": float(np.max(log_rho_star_n)),
        "log_lower_chain_rho0n": lower0,
        "log_lower_chain_rho_star_n": lower_star,
        "log_upper_C_nT": log_C_nT,
        "headline_C_T": s ** 3 * w.spatial.beta0 ** 3 / (6.0 * T ** 4 * (T ** 4 / 16.0 + 1.0)),
        "m_T": m_T, "M_T": M_T,
        "excluded_final_level": bool(np.any(~interior)),
    }
    slack = 1e-9
    ok = (obs["log_min_rho0n"] >= lower0 - slack
          and obs["log_min_rho_star_n"] >= lower_star - slack
          and obs["log_max_rho0n"] <= log_C_nT + slack
          and obs["log_max_rho_star_n"] <= log_C_nT + slack
          and obs["log_min_rho0n"] > -math.inf)
    return AuditReport(name="lemma-weight-sandwich",
                       lhs=obs["log_min_rho0n"], rhs=lower0,
                       ratio=math.nan, passed=bool(ok), log_scale=True,
                       components=obs,
                       params={"n": rw.n, "s": s, "lam": w.spatial.lam})


def suggest_s(w: CarlemanWeights, tgrid, *, n: Optional[float] = None,
              cap: float = 150.0) -> float:
    """Largest s keeping max |s A| (or |s A_n|) <= cap on the time levels
    strictly before T, so every rho power stays inside double range."""
    t = np.asarray(tgrid.t if hasattr(tgrid, "t") else tgrid, dtype=float)
    t = t[t < w.T]
    afac_max = float(np.max(np.abs(
        w.spatial.a_factor(np.linspace(0.0, 1.0, 513)))))
    if n is None:
        g = w.temporal.tau(t)
    else:
        g = RegularizedWeights(weights=w, n=n, omega=(0.0, 1.0))._g(t)
    peak = afac_max * float(np.max(g))
    return cap / peak
