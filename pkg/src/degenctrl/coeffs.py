"""Problem data for the coupled degenerate system: the degenerate diffusion
coefficient, the nonlocal factors, the reaction pair and the control
geometry.

All evaluators follow numpy broadcasting conventions.  Objects are immutable
after construction and safe to share across workers; hypothesis checks are
advisory by default and fatal under ``strict=True``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import ConstructionError, HypothesisViolationError

__all__ = [
    "DegenerateCoefficient",
    "NonlocalFactor",
    "ReactionPair",
    "BFields",
    "ControlGeometry",
    "ProblemSpec",
    "power_law_coefficient",
    "tabulated_coefficient",
    "coefficient_from_callables",
    "validate_degeneracy",
    "constant_factor",
    "affine_factor",
    "linear_reactions",
    "tanh_reactions",
    "linearize_reaction",
]


@dataclass(frozen=True)
class DegenerateCoefficient:
    """Diffusion coefficient a(x) on [0,1], weakly degenerate at x = 0.

    ``a`` must satisfy a(0) = 0, a > 0 on (0,1], a' >= 0 and the degeneracy
    bound x a'(x) <= K a(x) with K < 1.  ``da`` is never evaluated at x = 0
    (it may blow up there).
    """

    kind: str                      # "power-law" | "tabulated" | "callable"
    a: Callable[[np.ndarray], np.ndarray]
    da: Callable[[np.ndarray], np.ndarray]
    K: float
    alpha: Optional[float] = None

    def __call__(self, x):
        return self.a(np.asarray(x, dtype=float))


def power_law_coefficient(alpha: float) -> DegenerateCoefficient:
    """Power-law coefficient a(x) = x**alpha with exact degeneracy constant
    K = alpha (the ratio x a'/a is identically alpha)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"power-law exponent must lie in (0, 1), got {alpha}")

    def a(x):
        return np.power(np.asarray(x, dtype=float), alpha)

    def da(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return alpha * np.power(x, alpha - 1.0)

    return DegenerateCoefficient(kind="power-law", a=a, da=da,
                                 K=alpha, alpha=alpha)


def tabulated_coefficient(xs, values) -> DegenerateCoefficient:
    """Coefficient from samples, interpolated by a monotone (PCHIP) cubic.

    Monotone limiting keeps a' from oscillating, which matters because a'
    enters the degeneracy check.  Below the first interior sample the
    derivative is held at its value there (one-sided; a' may blow up at 0
    and is never requested at 0).
    """
    xs = np.asarray(xs, dtype=float)
    values = np.asarray(values, dtype=float)
    if xs.ndim != 1 or xs.shape != values.shape or xs.size < 3:
        raise ConstructionError("need matching 1-D sample arrays with >= 3 points")
    if not np.all(np.diff(xs) > 0):
        raise ConstructionError("sample abscissae must be strictly increasing")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(values))):
        raise ConstructionError("samples must be finite")

    interp = PchipInterpolator(xs, values, extrapolate=True)
    dinterp = interp.derivative()
    x_floor = xs[1]

    def a(x):
        return interp(np.asarray(x, dtype=float))

    def da(x):
        x = np.asarray(x, dtype=float)
        return dinterp(np.maximum(x, x_floor))

    # Advisory degeneracy constant from the table's own interior nodes.
    inner = xs[xs > 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = inner * dinterp(np.maximum(inner, x_floor)) / interp(inner)
    ratios = ratios[np.isfinite(ratios)]
    K = float(np.max(ratios)) if ratios.size else 0.0
    return DegenerateCoefficient(kind="tabulated", a=a, da=da, K=K)


def coefficient_from_callables(a, da, K, alpha=None) -> DegenerateCoefficient:
    """Wrap explicit evaluators (manufactured solutions, nondegenerate
    limits such as a = 1).  No admissibility is implied; run
    :func:`validate_degeneracy` to check."""
    return DegenerateCoefficient(kind="callable", a=a, da=da, K=K, alpha=alpha)


def validate_degeneracy(coeff: DegenerateCoefficient, nodes, *,
                        strict: bool = True) -> float:
    """Check x a'(x) <= K a(x) with K < 1 and a' >= 0 over sample nodes in
    (0, 1].  Returns the empirical constant K_est = max x a'/a.

    Raises :class:`HypothesisViolationError` when strict; warns otherwise.
    """
    nodes = np.asarray(nodes, dtype=float)
    if np.any(nodes <= 0) or np.any(nodes > 1):
        raise ValueError("nodes must lie in (0, 1]")
    av = coeff.a(nodes)
    dav = coeff.da(nodes)
    if np.any(av <= 0):
        _fail("a must be positive on (0, 1]", strict)
    K_est = float(np.max(nodes * dav / av))
    if np.any(dav < 0):
        _fail("a' must be nonnegative on (0, 1] (monotonicity violation)", strict)
    if K_est >= 1.0:
        _fail(f"degeneracy ratio x a'/a reaches {K_est:.6g} >= 1", strict)
    return K_est


def _fail(message, strict):
    if strict:
        raise HypothesisViolationError(message)
    warnings.warn(message, stacklevel=3)


@dataclass(frozen=True)
class NonlocalFactor:
    """Scalar factor ell(r) multiplying the degenerate coefficient,
    normalized so that ell(0) = 1, with |ell'| <= deriv_bound.

    ``lower``/``upper`` are optional global bounds 0 < ell0 <= ell <= L1
    used by the wellposedness-mode energy checks.
    """

    ell: Callable[[np.ndarray], np.ndarray]
    dell: Callable[[np.ndarray], np.ndarray]
    deriv_bound: float
    lower: Optional[float] = None
    upper: Optional[float] = None

    def __post_init__(self):
        e0 = float(self.ell(0.0))
        if abs(e0 - 1.0) > 1e-12:
            raise HypothesisViolationError(
                f"nonlocal factor must satisfy ell(0) = 1, got {e0!r}")

    def __call__(self, r):
        return self.ell(r)


def constant_factor() -> NonlocalFactor:
    """ell = 1 (the local limit)."""
    return NonlocalFactor(ell=lambda r: np.ones_like(np.asarray(r, dtype=float)),
                          dell=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
                          deriv_bound=0.0, lower=1.0, upper=1.0)


def affine_factor(slope: float, r_box: float = 1.0) -> NonlocalFactor:
    """ell(r) = 1 + slope * r with bounds quoted on |r| <= r_box."""
    lo = 1.0 - abs(slope) * r_box
    return NonlocalFactor(ell=lambda r: 1.0 + slope * np.asarray(r, dtype=float),
                          dell=lambda r: np.full_like(np.asarray(r, dtype=float), slope),
                          deriv_bound=abs(slope),
                          lower=lo if lo > 0 else None,
                          upper=1.0 + abs(slope) * r_box)


@dataclass(frozen=True)
class ReactionPair:
    """Reactions f1, f2 with f_i(t, x, 0, 0) = 0 and C^1 growth
    |f_i| <= C0 (|s1| + |s2|).

    Evaluators take (t, x, s1, s2) with numpy broadcasting.  Analytic
    partials with respect to the state slots are optional; finite
    differences are used when they are missing.
    """

    f1: Callable
    f2: Callable
    growth_const: float
    d3f1: Optional[Callable] = None
    d4f1: Optional[Callable] = None
    d3f2: Optional[Callable] = None
    d4f2: Optional[Callable] = None

    def partials(self, t, x, s1, s2, h_fd=1e-6):
        """The four state partials at (t, x, s1, s2), analytic when
        available, central differences otherwise.

        Returns [d3f1, d4f1, d3f2, d4f2] broadcast against s1/s2.
        """
        shape = np.broadcast(np.asarray(s1), np.asarray(s2)).shape
        out = []
        for f, d3, d4 in ((self.f1, self.d3f1, self.d4f1),
                          (self.f2, self.d3f2, self.d4f2)):
            for dana, slot in ((d3, 2), (d4, 3)):
                if dana is not None:
                    v = np.asarray(dana(t, x, s1, s2), dtype=float)
                elif slot == 2:
                    v = (np.asarray(f(t, x, s1 + h_fd, s2), dtype=float)
                         - np.asarray(f(t, x, s1 - h_fd, s2), dtype=float)) / (2 * h_fd)
                else:
                    v = (np.asarray(f(t, x, s1, s2 + h_fd), dtype=float)
                         - np.asarray(f(t, x, s1, s2 - h_fd), dtype=float)) / (2 * h_fd)
                out.append(np.broadcast_to(v, shape) if shape else v)
        return out

    def check_growth(self, rng, n_samples=1000, t_max=1.0, s_max=1.0):
        """Sample |f_i| <= C0 (|s1|+|s2|); returns the worst slack ratio."""
        t = rng.uniform(0.0, t_max, n_samples)
        x = rng.uniform(0.0, 1.0, n_samples)
        s1 = rng.uniform(-s_max, s_max, n_samples)
        s2 = rng.uniform(-s_max, s_max, n_samples)
        bound = self.growth_const * (np.abs(s1) + np.abs(s2))
        worst = 0.0
        for f in (self.f1, self.f2):
            v = np.abs(np.asarray(f(t, x, s1, s2), dtype=float))
            with np.errstate(invalid="ignore", divide="ignore"):
                ratio = np.where(bound > 0, v / np.maximum(bound, 1e-300), v)
            worst = max(worst, float(np.max(ratio)))
        return worst


def linear_reactions(b11, b12, b21, b22) -> ReactionPair:
    """f_i = b_i1 u + b_i2 v with constant or callable-in-(t,x) entries."""
    b = [_as_field_fn(c) for c in (b11, b12, b21, b22)]
    c0 = _const_bound(b11, b12, b21, b22)
    return ReactionPair(
        f1=lambda t, x, s1, s2: b[0](t, x) * s1 + b[1](t, x) * s2,
        f2=lambda t, x, s1, s2: b[2](t, x) * s1 + b[3](t, x) * s2,
        growth_const=c0,
        d3f1=lambda t, x, s1, s2: b[0](t, x) * np.ones_like(np.asarray(s1, dtype=float)),
        d4f1=lambda t, x, s1, s2: b[1](t, x) * np.ones_like(np.asarray(s2, dtype=float)),
        d3f2=lambda t, x, s1, s2: b[2](t, x) * np.ones_like(np.asarray(s1, dtype=float)),
        d4f2=lambda t, x, s1, s2: b[3](t, x) * np.ones_like(np.asarray(s2, dtype=float)),
    )


def tanh_reactions(b11, b12, b21, b22) -> ReactionPair:
    """Smooth bounded-derivative reactions f_i = b_i1 tanh(u) + b_i2 tanh(v).

    They vanish at (0,0), have globally bounded C^1 data and linearize at
    zero to the given constants, so the off-diagonal coupling hypothesis is
    inherited directly from b21.
    """
    c0 = abs(b11) + abs(b12) + abs(b21) + abs(b22)
    return ReactionPair(
        f1=lambda t, x, s1, s2: b11 * np.tanh(s1) + b12 * np.tanh(s2),
        f2=lambda t, x, s1, s2: b21 * np.tanh(s1) + b22 * np.tanh(s2),
        growth_const=max(c0, 1e-300),
        d3f1=lambda t, x, s1, s2: b11 / np.cosh(s1) ** 2,
        d4f1=lambda t, x, s1, s2: b12 / np.cosh(s2) ** 2,
        d3f2=lambda t, x, s1, s2: b21 / np.cosh(s1) ** 2,
        d4f2=lambda t, x, s1, s2: b22 / np.cosh(s2) ** 2,
    )


def _as_field_fn(c):
    if callable(c):
        return c
    return lambda t, x, c=float(c): c * np.ones_like(np.asarray(x, dtype=float))


def _const_bound(*cs):
    total = 0.0
    xs = np.linspace(0.0, 1.0, 65)
    for c in cs:
        if callable(c):
            total += float(np.max(np.abs(c(0.5, xs))))
        else:
            total += abs(float(c))
    return max(total, 1e-300)


@dataclass(frozen=True)
class BFields:
    """Linearized reaction coefficients b_ij(t,x) = d_{j+2} f_i(t,x,0,0)
    sampled on a tensor (time level, node) grid."""

    b11: np.ndarray
    b12: np.ndarray
    b21: np.ndarray
    b22: np.ndarray
    times: np.ndarray
    x: np.ndarray


def linearize_reaction(reactions: ReactionPair, times, x, *, h_fd=1e-6,
                       omega1=None, strict=True,
                       fd_check_rtol=1e-4) -> BFields:
    """Linearize the reactions about the zero state on a space-time grid.

    When analytic partials are supplied they are cross-checked against
    central finite differences at (0,0) with step ``h_fd``.  If ``omega1``
    is given, inf b21 over [0,T] x omega1 must be strictly positive.
    """
    if h_fd <= 0:
        raise ValueError("finite-difference step must be positive")
    times = np.asarray(times, dtype=float)
    x = np.asarray(x, dtype=float)
    tt, xx = np.meshgrid(times, x, indexing="ij")
    zero = np.zeros_like(xx)

    fields = {}
    specs = [("b11", reactions.f1, reactions.d3f1, 2), ("b12", reactions.f1, reactions.d4f1, 3),
             ("b21", reactions.f2, reactions.d3f2, 2), ("b22", reactions.f2, reactions.d4f2, 3)]
    for name, f, dana, slot in specs:
        fd = _central_partial(f, tt, xx, zero, slot, h_fd)
        if dana is not None:
            ana = np.broadcast_to(np.asarray(dana(tt, xx, zero, zero), dtype=float), fd.shape)
            scale = np.max(np.abs(ana)) + 1.0
            mism = np.max(np.abs(ana - fd))
            if mism > fd_check_rtol * scale + 100.0 * h_fd ** 2:
                _fail(f"analytic partial {name} disagrees with finite differences "
                      f"at zero (max |diff| = {mism:.3g})", strict)
            fields[name] = np.array(ana)
        else:
            fields[name] = fd

    if omega1 is not None:
        lo, hi = omega1
        mask = (x > lo) & (x < hi)
        if not np.any(mask):
            raise ValueError("omega1 contains no grid nodes")
        inf_b21 = float(np.min(fields["b21"][:, mask]))
        if inf_b21 <= 0.0:
            _fail(f"coupling hypothesis violated: inf b21 over [0,T] x omega1 "
                  f"is {inf_b21:.6g} (must be > 0)", strict)

    return BFields(times=times, x=x, **fields)


def _central_partial(f, tt, xx, zero, slot, h):
    if slot == 2:
        return (np.asarray(f(tt, xx, zero + h, zero), dtype=float)
                - np.asarray(f(tt, xx, zero - h, zero), dtype=float)) / (2 * h)
    return (np.asarray(f(tt, xx, zero, zero + h), dtype=float)
            - np.asarray(f(tt, xx, zero, zero - h), dtype=float)) / (2 * h)


@dataclass(frozen=True)
class ControlGeometry:
    """Time horizon and the nested control regions
    omega1, omega_prime strictly inside omega strictly inside (0,1)."""

    T: float
    omega: tuple
    omega1: tuple
    omega_prime: tuple

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("final time must be positive")
        a, b = self.omega
        if not 0.0 < a < b < 1.0:
            raise ValueError(f"omega = {self.omega} must be strictly inside (0,1)")
        for name, (lo, hi) in (("omega1", self.omega1),
                               ("omega_prime", self.omega_prime)):
            if not (a < lo < hi < b):
                raise ValueError(f"{name} = {(lo, hi)} must be strictly inside omega = {self.omega}")


@dataclass(frozen=True)
class ProblemSpec:
    """Full problem data for the nonlinear coupled system."""

    geometry: ControlGeometry
    coefficient: DegenerateCoefficient
    factors: tuple            # (NonlocalFactor, NonlocalFactor)
    reactions: ReactionPair
    u0: np.ndarray
    v0: np.ndarray

    def __post_init__(self):
        u0 = np.asarray(self.u0, dtype=float)
        v0 = np.asarray(self.v0, dtype=float)
        object.__setattr__(self, "u0", u0)
        object.__setattr__(self, "v0", v0)
        if u0.shape != v0.shape or u0.ndim != 1:
            raise ConstructionError("initial data must be matching 1-D arrays")
        if not (np.all(np.isfinite(u0)) and np.all(np.isfinite(v0))):
            raise ConstructionError("initial data must be finite")
        for name, w in (("u0", u0), ("v0", v0)):
            tol = 1e-12 * (1.0 + float(np.max(np.abs(w))))
            if abs(w[0]) > tol or abs(w[-1]) > tol:
                raise ConstructionError(
                    f"{name} must satisfy homogeneous Dirichlet conditions")
            w[0] = w[-1] = 0.0    # clamp rounding residue exactly

    def validate(self, *, n_probe=512, strict=True, rng=None):
        """Advisory hypothesis checks: degeneracy bound, factor derivative
        bound, reaction growth and the omega1 coupling condition."""
        nodes = np.linspace(0.0, 1.0, n_probe + 1)[1:]
        K_est = validate_degeneracy(self.coefficient, nodes, strict=strict)
        rs = np.linspace(-1.0, 1.0, 41)
        for i, fac in enumerate(self.factors):
            d = np.max(np.abs(fac.dell(rs)))
            if d > fac.deriv_bound + 1e-12:
                _fail(f"factor {i + 1}: |ell'| exceeds its declared bound", strict)
        times = np.linspace(0.0, self.geometry.T, 9)
        linearize_reaction(self.reactions, times, nodes, strict=strict,
                           omega1=self.geometry.omega1)
        if rng is not None:
            worst = self.reactions.check_growth(rng, t_max=self.geometry.T)
            if worst > 1.0 + 1e-9:
                _fail(f"reaction growth bound violated (ratio {worst:.4g})", strict)
        return K_est

    def scaled(self, factor: float) -> "ProblemSpec":
        """Same problem with initial data scaled by ``factor``."""
        return ProblemSpec(geometry=self.geometry, coefficient=self.coefficient,
                           factors=self.factors, reactions=self.reactions,
                           u0=self.u0 * factor, v0=self.v0 * factor)
