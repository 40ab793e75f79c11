"""Carleman functionals, inequality audits on sampled adjoint solutions and
the observability constant.

The weighted space-time integrals all share the structure

    sum_k c_k [ h sum_mid W_mid (s lam) sigma a xi_x^2
              + sum_i w_i W (s lam)^2 sigma^2 xi^2 ]

with W = e^{2 s phi} (theta-based) or e^{2 s A} (tau-based).  At t in
{0, T} for the theta-based weights (and t = T for the tau-based ones) the
integrand is set to zero analytically: e^{2 s phi} decays faster than any
power of sigma blows up, and evaluating the product naively gives 0 * inf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .discretization import Grid, TimeGrid, node_mask, space_inner
from .errors import NumericalError
from .solver import LinearCoefficients, SourceTerms, adjoint_solve, forward_linear_solve
from .weights import CarlemanWeights

__all__ = [
    "CarlemanReport", "ObservabilityEstimate", "functional_I",
    "functional_Gamma", "carleman_audit", "observability_constant",
    "dense_observability_gramians", "smoothed_noise",
]


@dataclass
class CarlemanReport:
    """Empirical two-sided record of a Carleman-type inequality."""

    which: str
    lhs: float
    rhs: float
    empirical_constant: float
    components: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    per_sample: list = field(default_factory=list)
    flagged: int = 0          # samples with undefined ratio (rhs == 0)


@dataclass
class ObservabilityEstimate:
    """Largest generalized Rayleigh quotient of the observability pencil."""

    C_obs: float
    y_T: np.ndarray
    z_T: np.ndarray
    history: list
    iterations: int
    converged: bool
    params: dict = field(default_factory=dict)


def _time_weights(tgrid: TimeGrid, t_lo=None, t_hi=None):
    """Trapezoid weights restricted to [t_lo, t_hi] (grid-aligned)."""
    t = tgrid.t
    c = np.full(tgrid.M + 1, tgrid.dt)
    c[0] = c[-1] = 0.5 * tgrid.dt
    if t_lo is not None or t_hi is not None:
        lo = t[0] if t_lo is None else t_lo
        hi = t[-1] if t_hi is None else t_hi
        inside = (t >= lo - 1e-12) & (t <= hi + 1e-12)
        c = np.where(inside, c, 0.0)
        on_edge = (np.abs(t - lo) < 1e-12) | (np.abs(t - hi) < 1e-12)
        interior_edge = on_edge & (t > t[0] + 1e-12) & (t < t[-1] - 1e-12)
        c[interior_edge] = 0.5 * tgrid.dt
    return c


def _weight_tables(weights: CarlemanWeights, grid: Grid, tgrid: TimeGrid,
                   kind: str):
    """exp-factor and base-weight tables at nodes and midpoints, with the
    singular time levels zeroed.

    kind "phi": (e^{2s phi}, sigma);  kind "A": (e^{2sA}, zeta).
    Returns (E_nodes, B_nodes, E_mid, B_mid, singular_rows_mask).
    """
    s = weights.s
    t = tgrid.t
    eta_n = weights.spatial.eta(grid.x)
    eta_m = weights.spatial.eta(grid.x_mid)
    afac_n = weights.spatial.a_factor(grid.x)
    afac_m = weights.spatial.a_factor(grid.x_mid)
    if kind == "phi":
        with np.errstate(divide="ignore"):
            base_t = weights.temporal.theta(t)
        sing = (t <= 0.0) | (t >= weights.T)
    elif kind == "A":
        with np.errstate(divide="ignore"):
            base_t = weights.temporal.tau(t)
        sing = t >= weights.T
    else:
        raise ValueError(kind)
    base_t = np.where(sing, 0.0, base_t)
    B_n = np.outer(base_t, eta_n)
    B_m = np.outer(base_t, eta_m)
    with np.errstate(over="ignore"):
        E_n = np.exp(2.0 * s * np.outer(base_t, afac_n))
        E_m = np.exp(2.0 * s * np.outer(base_t, afac_m))
    E_n[sing] = 0.0
    E_m[sing] = 0.0
    return E_n, B_n, E_m, B_m, sing


def _weighted_quadratic(xi, E_n, B_n, E_m, B_m, grid, c_t, s, lam,
                        grad_power=1, val_power=2, mask=None):
    """sum_k c_k [ h sum E_m (s lam B_m)^grad_power a xi_x^2
                 + sum w_i E_n (s lam B_n)^val_power xi^2 ]"""
    xi = np.asarray(xi, dtype=float)
    dx = np.diff(xi, axis=1) / grid.h
    grad_term = E_m * (s * lam * B_m) ** grad_power * grid.a_mid[None, :] * dx * dx
    val_term = E_n * (s * lam * B_n) ** val_power * xi * xi
    if mask is not None:
        val_term = val_term * mask[None, :]
        grad_term = grad_term * 0.0
    total_per_level = grid.h * grad_term.sum(axis=1) + val_term @ grid.w_trapz
    return float(np.dot(c_t, total_per_level))


def functional_I(s: float, lam: float, xi, weights: CarlemanWeights,
                 grid: Grid, tgrid: TimeGrid) -> float:
    """I(s, lam, xi) = int int e^{2s phi} [(s lam) sigma a xi_x^2
    + (s lam)^2 sigma^2 xi^2]; the t in {0,T} levels contribute zero."""
    xi = xi.values if hasattr(xi, "values") else np.asarray(xi, dtype=float)
    E_n, B_n, E_m, B_m, _ = _weight_tables(weights, grid, tgrid, "phi")
    c_t = _time_weights(tgrid)
    return _weighted_quadratic(xi, E_n, B_n, E_m, B_m, grid, c_t, s, lam)


def functional_Gamma(s: float, xi, vartheta, weights: CarlemanWeights,
                     grid: Grid, tgrid: TimeGrid, part: str = "full",
                     lam: Optional[float] = None) -> float:
    """Gamma(s, xi, vartheta) with the tau-based weights:
    int int e^{2sA} [(s lam) zeta a (xi_x^2 + vartheta_x^2)
    + (s lam)^2 zeta^2 (xi^2 + vartheta^2)]; "gamma1" restricts to
    (0, T/2), "gamma2" to (T/2, T); full = gamma1 + gamma2 exactly."""
    lam = weights.lam if lam is None else lam
    xi = xi.values if hasattr(xi, "values") else np.asarray(xi, dtype=float)
    vt = vartheta.values if hasattr(vartheta, "values") else np.asarray(vartheta, dtype=float)
    if part not in ("full", "gamma1", "gamma2"):
        raise ValueError(f"unknown part {part!r}")
    if part != "full" and tgrid.M % 2 != 0:
        raise ValueError("gamma1/gamma2 need an even number of time steps")
    E_n, B_n, E_m, B_m, _ = _weight_tables(weights, grid, tgrid, "A")
    half = weights.T / 2.0
    if part == "full":
        c_t = _time_weights(tgrid)
    elif part == "gamma1":
        c_t = _time_weights(tgrid, t_hi=half)
    else:
        c_t = _time_weights(tgrid, t_lo=half)
    total = 0.0
    for f in (xi, vt):
        total += _weighted_quadratic(f, E_n, B_n, E_m, B_m, grid, c_t,
                                     weights.s, lam)
    return total


def smoothed_noise(rng, n_nodes, passes: int = 2):
    """White noise with zero boundary values, smoothed by 3-point
    [1/4, 1/2, 1/4] averaging to suppress grid-frequency content."""
    w = rng.standard_normal(n_nodes)
    w[0] = w[-1] = 0.0
    for _ in range(passes):
        w[1:-1] = 0.25 * w[:-2] + 0.5 * w[1:-1] + 0.25 * w[2:]
        w[0] = w[-1] = 0.0
    return w


def carleman_audit(coeffs: LinearCoefficients, weights: CarlemanWeights,
                   s: float, lam: float, n_samples: int, which: str,
                   grid: Grid, tgrid: TimeGrid, omega, *,
                   seed: int = 0) -> CarlemanReport:
    """Empirical constant for the coupled Carleman inequality.

    Draws random terminal data and sources (sample 0 keeps F = 0), solves
    the adjoint system backward and compares the weighted left side
    against the source + local-observation right side.  which selects the
    theta-based estimate ("prop3.1") or the tau-based one ("prop3.2").
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if which not in ("prop3.1", "prop3.2"):
        raise ValueError(f"unknown audit target {which!r}")
    rng = np.random.default_rng(seed)
    kind = "phi" if which == "prop3.1" else "A"
    E_n, B_n, E_m, B_m, _ = _weight_tables(weights, grid, tgrid, kind)
    c_t = _time_weights(tgrid)
    w_omega = node_mask(grid, omega)
    shape = (tgrid.M + 1, grid.N + 2)

    per_sample = []
    comp_source = comp_local = 0.0
    worst = -math.inf
    flagged = 0
    lhs_at_worst = rhs_at_worst = math.nan
    for i in range(n_samples):
        y_T = smoothed_noise(rng, grid.N + 2)
        z_T = smoothed_noise(rng, grid.N + 2)
        if i == 0:
            F1 = np.zeros(shape)
            F2 = np.zeros(shape)
        else:
            F1 = np.stack([smoothed_noise(rng, grid.N + 2) for _ in range(tgrid.M + 1)])
            F2 = np.stack([smoothed_noise(rng, grid.N + 2) for _ in range(tgrid.M + 1)])
        adj = adjoint_solve(coeffs, F1, F2, y_T, z_T, grid, tgrid)
        y, z = adj.u.values, adj.v.values

        lhs = (_weighted_quadratic(y, E_n, B_n, E_m, B_m, grid, c_t, s, lam)
               + _weighted_quadratic(z, E_n, B_n, E_m, B_m, grid, c_t, s, lam))
        src = (_weighted_quadratic(F1, E_n, B_n, E_m, B_m, grid, c_t, s, lam,
                                   val_power=4, mask=np.ones(grid.N + 2))
               + _weighted_quadratic(F2, E_n, B_n, E_m, B_m, grid, c_t, s, lam,
                                     val_power=4, mask=np.ones(grid.N + 2)))
        loc = _weighted_quadratic(y, E_n, B_n, E_m, B_m, grid, c_t, s, lam,
                                  val_power=8, mask=w_omega.astype(float))
        rhs = src + loc
        if rhs <= 0.0:
            flagged += 1
            per_sample.append({"sample": i, "lhs": lhs, "rhs": rhs,
                               "ratio": math.nan})
            continue
        ratio = lhs / rhs
        per_sample.append({"sample": i, "lhs": lhs, "rhs": rhs, "ratio": ratio})
        comp_source += src
        comp_local += loc
        if ratio > worst:
            worst, lhs_at_worst, rhs_at_worst = ratio, lhs, rhs

    return CarlemanReport(
        which=which, lhs=lhs_at_worst, rhs=rhs_at_worst,
        empirical_constant=worst if worst > -math.inf else math.nan,
        components={"source_integral_total": comp_source,
                    "local_integral_total": comp_local},
        params={"s": s, "lam": lam, "n_samples": n_samples, "seed": seed,
                "N": grid.N, "M": tgrid.M},
        per_sample=per_sample, flagged=flagged)


class _ObservabilityForms:
    """The two quadratic forms on terminal data, realized through exact
    forward/adjoint solve compositions (h-metric self-adjoint)."""

    def __init__(self, coeffs, weights, s, lam, grid, tgrid, omega):
        self.coeffs = coeffs
        self.grid, self.tgrid = grid, tgrid
        E_n, B_n, _, _, _ = _weight_tables(weights, grid, tgrid, "A")
        w_omega = node_mask(grid, omega).astype(float)
        self.W_obs = E_n * (s * lam * B_n) ** 8 * w_omega[None, :]
        self.N = grid.N

    def _split(self, xi):
        return xi[:self.N], xi[self.N:]

    def _join(self, a, b):
        return np.concatenate([a, b])

    def _embed(self, interior):
        full = np.zeros(self.grid.N + 2)
        full[1:-1] = interior
        return full

    def adjoint_traj(self, xi):
        yT = self._embed(xi[:self.N])
        zT = self._embed(xi[self.N:])
        adj = adjoint_solve(self.coeffs, None, None, yT, zT, self.grid, self.tgrid)
        return adj.u.values, adj.v.values

    def apply_N(self, xi):
        """N = A^T A with A: terminal data -> adjoint value at t=0."""
        p, q = self.adjoint_traj(xi)
        fwd = forward_linear_solve(self.coeffs, SourceTerms(), p[0], q[0],
                                   self.grid, self.tgrid)
        return self._join(fwd.u.values[-1][1:-1], fwd.v.values[-1][1:-1])

    def value_N(self, xi):
        p, q = self.adjoint_traj(xi)
        return (space_inner(p[0], p[0], self.grid)
                + space_inner(q[0], q[0], self.grid))

    def apply_D(self, xi):
        """D = B^T W B with the left-rectangle pairing: sources at level k
        carry W p at level k-1 (the exact transpose pairing)."""
        p, _ = self.adjoint_traj(xi)
        M = self.tgrid.M
        S1 = np.zeros_like(p)
        S1[1:M + 1] = self.W_obs[0:M] * p[0:M]
        fwd = forward_linear_solve(self.coeffs, SourceTerms(g1=S1),
                                   np.zeros(self.grid.N + 2),
                                   np.zeros(self.grid.N + 2),
                                   self.grid, self.tgrid)
        return self._join(fwd.u.values[-1][1:-1], fwd.v.values[-1][1:-1])

    def value_D(self, xi):
        p, _ = self.adjoint_traj(xi)
        M = self.tgrid.M
        lv = np.array([space_inner(self.W_obs[k] * p[k], p[k], self.grid)
                       for k in range(M)])
        return float(self.tgrid.dt * np.sum(lv))


def _cg_solve(apply_op, b, tol, max_iter):
    """Plain CG for an SPD operator given by its application."""
    x = np.zeros_like(b)
    r = b.copy()
    d = r.copy()
    rr = float(r @ r)
    b_norm = math.sqrt(rr)
    if b_norm == 0.0:
        return x, 0
    for it in range(max_iter):
        Ad = apply_op(d)
        dAd = float(d @ Ad)
        if dAd <= 0.0:
            break
        alpha = rr / dAd
        x += alpha * d
        r -= alpha * Ad
        rr_new = float(r @ r)
        if math.sqrt(rr_new) <= tol * b_norm:
            return x, it + 1
        d = r + (rr_new / rr) * d
        rr = rr_new
    return x, max_iter


def observability_constant(coeffs: LinearCoefficients, weights: CarlemanWeights,
                           s: float, lam: float, grid: Grid, tgrid: TimeGrid,
                           omega, *, solver_tol: float = 1e-10,
                           power_tol: float = 1e-10, max_iter: int = 300,
                           seed: int = 0) -> ObservabilityEstimate:
    """Largest mu with N xi = mu D xi, where N(xi) = ||(y,z)(0)||^2 and
    D(xi) is the weighted local observation of y, by generalized power
    iteration (inner CG solves with D)."""
    forms = _ObservabilityForms(coeffs, weights, s, lam, grid, tgrid, omega)
    dim = 2 * grid.N
    rng = np.random.default_rng(seed)
    for attempt in range(3):
        xi = rng.standard_normal(dim)
        xi /= np.linalg.norm(xi)
        den = forms.value_D(xi)
        num = forms.value_N(xi)
        if den > 1e-280 * max(num, 1.0):
            break
    else:
        raise NumericalError("observation form numerically degenerate for "
                             "all random starts; reseed or enlarge omega")
    mu = num / den
    history = [mu]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        rhs = forms.apply_N(xi)
        z, _ = _cg_solve(forms.apply_D, rhs, solver_tol, 20 * dim)
        nz = np.linalg.norm(z)
        if nz == 0.0 or not np.all(np.isfinite(z)):
            raise NumericalError("power iteration produced a degenerate "
                                 "direction; restart with a new seed")
        xi = z / nz
        den = forms.value_D(xi)
        num = forms.value_N(xi)
        if den <= 0.0:
            raise NumericalError("denominator vanished along the iteration")
        mu_new = num / den
        history.append(mu_new)
        if abs(mu_new - mu) <= power_tol * abs(mu_new):
            mu = mu_new
            converged = True
            break
        mu = mu_new
    yT = forms._embed(xi[:grid.N])
    zT = forms._embed(xi[grid.N:])
    return ObservabilityEstimate(C_obs=float(mu), y_T=yT, z_T=zT,
                                 history=history, iterations=it,
                                 converged=converged,
                                 params={"s": s, "lam": lam, "N": grid.N,
                                         "M": tgrid.M, "seed": seed})


def dense_observability_gramians(coeffs, weights, s, lam, grid, tgrid, omega):
    """Dense oracle: assemble both Gramians column by column (unit terminal
    data), h-metric symmetric.  Feasible for N up to a few dozen."""
    forms = _ObservabilityForms(coeffs, weights, s, lam, grid, tgrid, omega)
    dim = 2 * grid.N
    Nmat = np.zeros((dim, dim))
    Dmat = np.zeros((dim, dim))
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = 1.0
        Nmat[:, j] = forms.apply_N(e)
        Dmat[:, j] = forms.apply_D(e)
    Nmat = grid.h * 0.5 * (Nmat + Nmat.T)
    Dmat = grid.h * 0.5 * (Dmat + Dmat.T)
    return Nmat, Dmat


def dense_observability_constant(coeffs, weights, s, lam, grid, tgrid, omega,
                                 rank_tol: float = 1e-13):
    """Largest generalized eigenvalue of the dense pencil, restricted to
    the numerically nonsingular subspace of the observation Gramian."""
    import scipy.linalg

    Nmat, Dmat = dense_observability_gramians(coeffs, weights, s, lam, grid,
                                              tgrid, omega)
    evals, evecs = scipy.linalg.eigh(Dmat)
    keep = evals > rank_tol * np.max(evals)
    if not np.any(keep):
        raise NumericalError("observation Gramian numerically zero")
    V = evecs[:, keep] / np.sqrt(evals[keep])[None, :]
    reduced = V.T @ Nmat @ V
    mu = scipy.linalg.eigvalsh(reduced)
    return float(np.max(mu))
