"""Time-steppers for the coupled degenerate system.

Forward march (implicit Euler, sources taken at the new level):

    (I + dt (ell_i L + B_{k+1})) W^{k+1} = W^k + dt S^{k+1},   k = 0..M-1

with W = (u, v) stacked and B the zero-order coupling.  The backward
adjoint march is the exact transpose of the forward one:

    P^M = P_T,
    (I + dt (ell_i L + B_{k+1})^T) P^k = P^{k+1} + dt F^{k+1},  k = M-1..0

so that the discrete duality identity

    dt sum_k <S^k, P^{k-1}> + <W^0, P^0> = dt sum_k <W^k, F^k> + <W^M, P^M>

holds to rounding for every source/data combination (the transposed
coupling puts b21 into the first adjoint equation).  Each step solves one
pentadiagonal system in the interleaved unknowns (u_1, v_1, u_2, v_2, ...).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .coeffs import ProblemSpec
from .discretization import (DegenerateOperator, EigenBasis, Grid, SpaceTimeField,
                             TimeGrid, assemble_degenerate_operator, discrete_norm,
                             node_mask, nonlocal_integral, space_inner)
from .errors import NumericalError, ParabolicityLostError, StepSizeError
from .report import AuditReport

__all__ = [
    "LinearCoefficients", "SourceTerms", "SolveResult",
    "forward_linear_solve", "adjoint_solve", "duality_gap",
    "nonlinear_forward_solve", "galerkin_forward_solve", "energy_checks",
    "step_energy_identity",
]


@dataclass
class LinearCoefficients:
    """Zero-order coupling fields b_ij(t,x) plus per-level diffusion scale
    factors (both default to the identity scale)."""

    b11: np.ndarray
    b12: np.ndarray
    b21: np.ndarray
    b22: np.ndarray
    ell1: Optional[np.ndarray] = None     # per time level, defaults to 1
    ell2: Optional[np.ndarray] = None

    @classmethod
    def from_problem(cls, spec: ProblemSpec, grid: Grid, tgrid: TimeGrid,
                     h_fd: float = 1e-6) -> "LinearCoefficients":
        """Coefficients of the linearization about the zero state."""
        from .coeffs import linearize_reaction
        bf = linearize_reaction(spec.reactions, tgrid.t, grid.x, h_fd=h_fd,
                                omega1=spec.geometry.omega1, strict=False)
        return cls(b11=bf.b11, b12=bf.b12, b21=bf.b21, b22=bf.b22)

    @classmethod
    def constant(cls, b11, b12, b21, b22, grid: Grid, tgrid: TimeGrid):
        shape = (tgrid.M + 1, grid.N + 2)
        return cls(b11=np.full(shape, float(b11)), b12=np.full(shape, float(b12)),
                   b21=np.full(shape, float(b21)), b22=np.full(shape, float(b22)))

    def level(self, k):
        e1 = 1.0 if self.ell1 is None else float(self.ell1[k])
        e2 = 1.0 if self.ell2 is None else float(self.ell2[k])
        return (self.b11[k], self.b12[k], self.b21[k], self.b22[k], e1, e2)

    def validate_shapes(self, grid: Grid, tgrid: TimeGrid):
        shape = (tgrid.M + 1, grid.N + 2)
        for name in ("b11", "b12", "b21", "b22"):
            arr = getattr(self, name)
            if arr.shape != shape or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite with shape {shape}")


@dataclass
class SourceTerms:
    """Right-hand sides: h acts on the first equation through the indicator
    of omega, g1/g2 are distributed sources.  h is zeroed off omega."""

    g1: Optional[np.ndarray] = None
    g2: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None
    omega_mask: Optional[np.ndarray] = None

    def resolved(self, grid: Grid, tgrid: TimeGrid):
        shape = (tgrid.M + 1, grid.N + 2)
        g1 = np.zeros(shape) if self.g1 is None else np.asarray(self.g1, dtype=float)
        g2 = np.zeros(shape) if self.g2 is None else np.asarray(self.g2, dtype=float)
        h = np.zeros(shape) if self.h is None else np.array(self.h, dtype=float)
        if self.omega_mask is not None:
            h = h * self.omega_mask[None, :]
        return g1, g2, h


@dataclass
class SolveResult:
    """States (or adjoint states) on the full tensor grid plus per-step
    diagnostics.  The initial (forward) or terminal (adjoint) level equals
    the given data exactly."""

    u: SpaceTimeField
    v: SpaceTimeField
    diagnostics: dict = field(default_factory=dict)

    @property
    def grid(self):
        return self.u.grid

    @property
    def tgrid(self):
        return self.u.tgrid

    def final_norm(self) -> float:
        g = self.grid
        return float(np.sqrt(discrete_norm(self.u.values[-1], "l2", g) ** 2
                             + discrete_norm(self.v.values[-1], "l2", g) ** 2))


def _banded_step_matrix(op: DegenerateOperator, b11, b12, b21, b22,
                        ell1, ell2, dt):
    """Interleaved pentadiagonal matrix I + dt(ell L + B) in solve_banded
    layout (2 super-, 2 sub-diagonals)."""
    N = op.grid.N
    ab = np.zeros((5, 2 * N))
    ab[2, 0::2] = 1.0 + dt * (ell1 * op.diag + b11[1:-1])
    ab[2, 1::2] = 1.0 + dt * (ell2 * op.diag + b22[1:-1])
    ab[1, 1::2] = dt * b12[1:-1]           # (u_i row, v_i col)
    ab[3, 0::2] = dt * b21[1:-1]           # (v_i row, u_i col)
    ab[0, 2::2] = dt * ell1 * op.off       # u_i <- u_{i+1}
    ab[0, 3::2] = dt * ell2 * op.off
    ab[4, 0:2 * N - 2:2] = dt * ell1 * op.off
    ab[4, 1:2 * N - 1:2] = dt * ell2 * op.off
    return ab


def _solve_step(ab, rhs_u, rhs_v):
    N = rhs_u.shape[0]
    rhs = np.empty(2 * N)
    rhs[0::2] = rhs_u
    rhs[1::2] = rhs_v
    try:
        sol = scipy.linalg.solve_banded((2, 2), ab, rhs,
                                        overwrite_ab=False, overwrite_b=True,
                                        check_finite=False)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise StepSizeError(f"implicit step failed ({exc}); "
                            "try a smaller time step") from exc
    if not np.all(np.isfinite(sol)):
        raise StepSizeError("implicit step produced non-finite values; "
                            "try a smaller time step")
    return sol[0::2], sol[1::2]


def forward_linear_solve(coeffs: LinearCoefficients, sources: SourceTerms,
                         u0, v0, grid: Grid, tgrid: TimeGrid, *,
                         scheme: str = "be") -> SolveResult:
    """March the linear coupled system from (u0, v0).

    scheme "be" is the transpose-exact default; "cn" (Crank-Nicolson with
    midpoint sources) is available for time-accuracy probes only.
    """
    coeffs.validate_shapes(grid, tgrid)
    g1, g2, h = sources.resolved(grid, tgrid)
    op = assemble_degenerate_operator(None, grid)
    M, dt = tgrid.M, tgrid.dt
    u = np.zeros((M + 1, grid.N + 2))
    v = np.zeros((M + 1, grid.N + 2))
    u[0], v[0] = np.asarray(u0, dtype=float), np.asarray(v0, dtype=float)
    l2_traj = np.zeros(M + 1)
    nonloc_u = np.zeros(M + 1)
    nonloc_v = np.zeros(M + 1)
    l2_traj[0] = np.sqrt(discrete_norm(u[0], "l2", grid) ** 2
                         + discrete_norm(v[0], "l2", grid) ** 2)
    nonloc_u[0] = nonlocal_integral(u[0], grid)
    nonloc_v[0] = nonlocal_integral(v[0], grid)

    for k in range(M):
        b11, b12, b21, b22, e1, e2 = coeffs.level(k + 1)
        s1 = (h[k + 1] + g1[k + 1])[1:-1]
        s2 = g2[k + 1][1:-1]
        if scheme == "be":
            ab = _banded_step_matrix(op, b11, b12, b21, b22, e1, e2, dt)
            rhs_u = u[k][1:-1] + dt * s1
            rhs_v = v[k][1:-1] + dt * s2
        elif scheme == "cn":
            ab = _banded_step_matrix(op, b11, b12, b21, b22, e1, e2, dt / 2)
            b11o, b12o, b21o, b22o, e1o, e2o = coeffs.level(k)
            lu = e1o * op.apply(u[k])[1:-1] + b11o[1:-1] * u[k][1:-1] + b12o[1:-1] * v[k][1:-1]
            lv = e2o * op.apply(v[k])[1:-1] + b21o[1:-1] * u[k][1:-1] + b22o[1:-1] * v[k][1:-1]
            s1m = 0.5 * ((h[k] + g1[k])[1:-1] + s1)
            s2m = 0.5 * (g2[k][1:-1] + s2)
            rhs_u = u[k][1:-1] - 0.5 * dt * lu + dt * s1m
            rhs_v = v[k][1:-1] - 0.5 * dt * lv + dt * s2m
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        u[k + 1, 1:-1], v[k + 1, 1:-1] = _solve_step(ab, rhs_u, rhs_v)
        l2_traj[k + 1] = np.sqrt(discrete_norm(u[k + 1], "l2", grid) ** 2
                                 + discrete_norm(v[k + 1], "l2", grid) ** 2)
        nonloc_u[k + 1] = nonlocal_integral(u[k + 1], grid)
        nonloc_v[k + 1] = nonlocal_integral(v[k + 1], grid)

    return SolveResult(
        u=SpaceTimeField(u, grid, tgrid), v=SpaceTimeField(v, grid, tgrid),
        diagnostics={"l2_trajectory": l2_traj, "nonlocal_u": nonloc_u,
                     "nonlocal_v": nonloc_v, "scheme": scheme, "steps": M})


def adjoint_solve(coeffs: LinearCoefficients, F1, F2, y_T, z_T,
                  grid: Grid, tgrid: TimeGrid) -> SolveResult:
    """Backward adjoint march with the transposed coupling (b21 enters the
    first equation), exactly transposing the forward step.

    F1/F2 may be None (treated as zero).  Level M of the result is the
    given terminal data; level k is produced with coefficients at level
    k+1, so the pairing partner of a forward source at level k is the
    adjoint value at level k-1.
    """
    coeffs.validate_shapes(grid, tgrid)
    M, dt = tgrid.M, tgrid.dt
    shape = (M + 1, grid.N + 2)
    F1 = np.zeros(shape) if F1 is None else np.asarray(F1, dtype=float)
    F2 = np.zeros(shape) if F2 is None else np.asarray(F2, dtype=float)
    op = assemble_degenerate_operator(None, grid)
    p = np.zeros(shape)
    q = np.zeros(shape)
    p[M], q[M] = np.asarray(y_T, dtype=float), np.asarray(z_T, dtype=float)

    for k in range(M - 1, -1, -1):
        b11, b12, b21, b22, e1, e2 = coeffs.level(k + 1)
        ab = _banded_step_matrix(op, b11, b21, b12, b22, e1, e2, dt)
        rhs_p = p[k + 1][1:-1] + dt * F1[k + 1][1:-1]
        rhs_q = q[k + 1][1:-1] + dt * F2[k + 1][1:-1]
        p[k, 1:-1], q[k, 1:-1] = _solve_step(ab, rhs_p, rhs_q)

    return SolveResult(u=SpaceTimeField(p, grid, tgrid),
                       v=SpaceTimeField(q, grid, tgrid),
                       diagnostics={"direction": "backward", "steps": M})


def duality_gap(forward: SolveResult, adjoint: SolveResult,
                sources: SourceTerms, F1, F2, u0, v0, y_T, z_T) -> float:
    """Residual of the exact discrete duality identity (relative)."""
    grid, tgrid = forward.grid, forward.tgrid
    g1, g2, h = sources.resolved(grid, tgrid)
    dt = tgrid.dt
    shape = (tgrid.M + 1, grid.N + 2)
    F1 = np.zeros(shape) if F1 is None else np.asarray(F1, dtype=float)
    F2 = np.zeros(shape) if F2 is None else np.asarray(F2, dtype=float)
    p, q = adjoint.u.values, adjoint.v.values
    u, v = forward.u.values, forward.v.values
    lhs = dt * sum(space_inner((h + g1)[k], p[k - 1], grid)
                   + space_inner(g2[k], q[k - 1], grid)
                   for k in range(1, tgrid.M + 1))
    lhs += space_inner(u0, p[0], grid) + space_inner(v0, q[0], grid)
    rhs = dt * sum(space_inner(u[k], F1[k], grid) + space_inner(v[k], F2[k], grid)
                   for k in range(1, tgrid.M + 1))
    rhs += space_inner(u[-1], y_T, grid) + space_inner(v[-1], z_T, grid)
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return abs(lhs - rhs) / scale


def nonlinear_forward_solve(spec: ProblemSpec, h, grid: Grid, tgrid: TimeGrid, *,
                            picard: str = "lagged", picard_max: int = 25,
                            picard_tol: float = 1e-12,
                            reaction: str = "linearized") -> SolveResult:
    """Semi-implicit march for the nonlinear nonlocal system.

    Each step solves the implicit system with diffusion factor
    ell_i(int of the previous iterate) and the reaction linearized about
    the previous iterate ("linearized") or simply lagged ("lagged").
    picard="lagged" does one pass; "iterate" repeats the step to the fully
    implicit fixed point.
    """
    if picard not in ("lagged", "iterate"):
        raise ValueError("picard must be 'lagged' or 'iterate'")
    fac1, fac2 = spec.factors
    reac = spec.reactions
    op = assemble_degenerate_operator(None, grid)
    M, dt = tgrid.M, tgrid.dt
    x = grid.x
    shape = (M + 1, grid.N + 2)
    h = np.zeros(shape) if h is None else np.asarray(h, dtype=float)
    mask = node_mask(grid, spec.geometry.omega).astype(float)
    u = np.zeros(shape)
    v = np.zeros(shape)
    u[0], v[0] = spec.u0, spec.v0
    ell1_traj = np.zeros(M + 1)
    ell2_traj = np.zeros(M + 1)
    nonloc_u = np.zeros(M + 1)
    nonloc_v = np.zeros(M + 1)
    nonloc_u[0] = nonlocal_integral(u[0], grid)
    nonloc_v[0] = nonlocal_integral(v[0], grid)
    ell1_traj[0] = float(fac1.ell(nonloc_u[0]))
    ell2_traj[0] = float(fac2.ell(nonloc_v[0]))
    picard_counts = np.zeros(M, dtype=int)
    t_levels = tgrid.t

    for k in range(M):
        t_next = t_levels[k + 1]
        ubar, vbar = u[k].copy(), v[k].copy()
        hs = (h[k + 1] * mask)[1:-1]
        n_pass = 1 if picard == "lagged" else picard_max
        for it in range(n_pass):
            e1 = float(fac1.ell(nonlocal_integral(ubar, grid)))
            e2 = float(fac2.ell(nonlocal_integral(vbar, grid)))
            if e1 <= 0.0 or e2 <= 0.0:
                raise ParabolicityLostError(
                    f"nonlocal factor nonpositive at step {k + 1} "
                    f"(ell1={e1:.4g}, ell2={e2:.4g})")
            f1b = np.asarray(reac.f1(t_next, x, ubar, vbar), dtype=float)
            f2b = np.asarray(reac.f2(t_next, x, ubar, vbar), dtype=float)
            if reaction == "linearized":
                d31, d41, d32, d42 = reac.partials(t_next, x, ubar, vbar)
                rhs_u = u[k][1:-1] + dt * (hs - f1b[1:-1]
                                           + d31[1:-1] * ubar[1:-1] + d41[1:-1] * vbar[1:-1])
                rhs_v = v[k][1:-1] + dt * (-f2b[1:-1]
                                           + d32[1:-1] * ubar[1:-1] + d42[1:-1] * vbar[1:-1])
                ab = _banded_step_matrix(op, d31, d41, d32, d42, e1, e2, dt)
            else:
                zero = np.zeros_like(x)
                rhs_u = u[k][1:-1] + dt * (hs - f1b[1:-1])
                rhs_v = v[k][1:-1] + dt * (-f2b[1:-1])
                ab = _banded_step_matrix(op, zero, zero, zero, zero, e1, e2, dt)
            un = np.zeros_like(ubar)
            vn = np.zeros_like(vbar)
            un[1:-1], vn[1:-1] = _solve_step(ab, rhs_u, rhs_v)
            incr = np.sqrt(discrete_norm(un - ubar, "l2", grid) ** 2
                           + discrete_norm(vn - vbar, "l2", grid) ** 2)
            scale = np.sqrt(discrete_norm(un, "l2", grid) ** 2
                            + discrete_norm(vn, "l2", grid) ** 2) + 1e-30
            ubar, vbar = un, vn
            picard_counts[k] = it + 1
            if picard == "lagged" or incr <= picard_tol * scale:
                break
        else:
            raise NumericalError(
                f"Picard iteration did not converge at step {k + 1}: "
                f"last relative increment {incr / scale:.3e}")
        u[k + 1], v[k + 1] = ubar, vbar
        nonloc_u[k + 1] = nonlocal_integral(u[k + 1], grid)
        nonloc_v[k + 1] = nonlocal_integral(v[k + 1], grid)
        ell1_traj[k + 1] = float(fac1.ell(nonloc_u[k + 1]))
        ell2_traj[k + 1] = float(fac2.ell(nonloc_v[k + 1]))

    return SolveResult(
        u=SpaceTimeField(u, grid, tgrid), v=SpaceTimeField(v, grid, tgrid),
        diagnostics={"nonlocal_u": nonloc_u, "nonlocal_v": nonloc_v,
                     "ell1": ell1_traj, "ell2": ell2_traj,
                     "picard_iterations": picard_counts, "reaction": reaction})


def galerkin_forward_solve(spec: ProblemSpec, h, basis: EigenBasis,
                           grid: Grid, tgrid: TimeGrid, *,
                           reaction: str = "linearized") -> SolveResult:
    """Spectral oracle: march the modal coefficients of the eigenbasis with
    implicit (diagonal) diffusion, lagged nonlocal factor and projected
    reactions, then expand back to nodes."""
    if basis.count < 4:
        raise ValueError("need at least 4 modes")
    fac1, fac2 = spec.factors
    reac = spec.reactions
    M, dt = tgrid.M, tgrid.dt
    x = grid.x
    m = basis.count
    lam = basis.eigenvalues
    phi_int = basis.modes[:, 1:-1]                 # (m, N)
    mode_integrals = basis.modes @ grid.w_trapz    # int of each mode
    mask = node_mask(grid, spec.geometry.omega).astype(float)
    shape = (M + 1, grid.N + 2)
    h = np.zeros(shape) if h is None else np.asarray(h, dtype=float)

    g = basis.project(np.asarray(spec.u0, dtype=float))
    w = basis.project(np.asarray(spec.v0, dtype=float))
    u = np.zeros(shape)
    v = np.zeros(shape)
    u[0] = basis.expand(g)
    v[0] = basis.expand(w)

    def project(nodal):
        return grid.h * (phi_int @ nodal[1:-1])

    for k in range(M):
        t_next = tgrid.t[k + 1]
        iu = float(g @ mode_integrals)
        iv = float(w @ mode_integrals)
        e1 = float(fac1.ell(iu))
        e2 = float(fac2.ell(iv))
        if e1 <= 0.0 or e2 <= 0.0:
            raise ParabolicityLostError(
                f"nonlocal factor nonpositive at step {k + 1} in modal march")
        ubar = basis.expand(g)
        vbar = basis.expand(w)
        f1b = np.asarray(reac.f1(t_next, x, ubar, vbar), dtype=float)
        f2b = np.asarray(reac.f2(t_next, x, ubar, vbar), dtype=float)
        s1 = project(h[k + 1] * mask - f1b)
        s2 = project(-f2b)
        if reaction == "linearized":
            d31, d41, d32, d42 = reac.partials(t_next, x, ubar, vbar)
            s1 += project(d31 * ubar + d41 * vbar)
            s2 += project(d32 * ubar + d42 * vbar)
            P11 = grid.h * (phi_int * d31[1:-1]) @ phi_int.T
            P12 = grid.h * (phi_int * d41[1:-1]) @ phi_int.T
            P21 = grid.h * (phi_int * d32[1:-1]) @ phi_int.T
            P22 = grid.h * (phi_int * d42[1:-1]) @ phi_int.T
            A = np.zeros((2 * m, 2 * m))
            A[:m, :m] = np.diag(1.0 + dt * e1 * lam) + dt * P11
            A[:m, m:] = dt * P12
            A[m:, :m] = dt * P21
            A[m:, m:] = np.diag(1.0 + dt * e2 * lam) + dt * P22
            rhs = np.concatenate([g + dt * s1, w + dt * s2])
            sol = np.linalg.solve(A, rhs)
            g, w = sol[:m], sol[m:]
        else:
            g = (g + dt * s1) / (1.0 + dt * e1 * lam)
            w = (w + dt * s2) / (1.0 + dt * e2 * lam)
        u[k + 1] = basis.expand(g)
        v[k + 1] = basis.expand(w)

    return SolveResult(
        u=SpaceTimeField(u, grid, tgrid), v=SpaceTimeField(v, grid, tgrid),
        diagnostics={"modes": m, "reaction": reaction})


def step_energy_identity(result: SolveResult, coeffs: LinearCoefficients,
                         sources: SourceTerms) -> AuditReport:
    """Exact per-step energy identity of the implicit march:

        1/2 d||W||^2 + 1/2 ||dW||^2 + dt sum ell_i ||sqrt(a) W_x||^2
            + dt <B W, W> - dt <S, W> = 0

    evaluated at the new level; the worst relative residual over all steps
    is reported (ties the flux stencil to the H1_a seminorm)."""
    grid, tgrid = result.grid, result.tgrid
    g1, g2, h = sources.resolved(grid, tgrid)
    dt = tgrid.dt
    u, v = result.u.values, result.v.values
    worst = 0.0
    for k in range(tgrid.M):
        b11, b12, b21, b22, e1, e2 = coeffs.level(k + 1)
        un, vn = u[k + 1], v[k + 1]
        du, dv = un - u[k], vn - v[k]
        dy = 0.5 * (space_inner(un, un, grid) - space_inner(u[k], u[k], grid)
                    + space_inner(vn, vn, grid) - space_inner(v[k], v[k], grid))
        jump = 0.5 * (space_inner(du, du, grid) + space_inner(dv, dv, grid))
        semi_u = float(np.sum(grid.h * grid.a_mid * (np.diff(un) / grid.h) ** 2))
        semi_v = float(np.sum(grid.h * grid.a_mid * (np.diff(vn) / grid.h) ** 2))
        diss = dt * (e1 * semi_u + e2 * semi_v)
        react = dt * (space_inner(b11 * un + b12 * vn, un, grid)
                      + space_inner(b21 * un + b22 * vn, vn, grid))
        pair = dt * (space_inner((h + g1)[k + 1], un, grid)
                     + space_inner(g2[k + 1], vn, grid))
        resid = dy + jump + diss + react - pair
        scale = abs(dy) + jump + diss + abs(react) + abs(pair) + 1e-300
        worst = max(worst, abs(resid) / scale)
    return AuditReport(name="step-energy-identity", lhs=worst, rhs=1e-10,
                       ratio=worst / 1e-10, passed=worst <= 1e-10,
                       components={"worst_relative_residual": worst})


def energy_checks(result: SolveResult, which: str, *,
                  C0: float = 0.0, ell_lower: float = 1.0,
                  ell_upper: float = 1.0, deriv_bound: float = 0.0,
                  F1=None, F2=None, tol: float = 1e-9,
                  coeffs: Optional[LinearCoefficients] = None,
                  sources: Optional[SourceTerms] = None) -> AuditReport:
    """Audit the constructive energy chains of the well-posedness argument
    (E1-E3), the per-step identity, or report the empirical constant of the
    linear a-priori estimate ("linear-2.5", non-constructive constant).

    C0 is the reaction growth constant; ell_lower/ell_upper bound the
    nonlocal factors; deriv_bound bounds |ell'|.
    """
    grid, tgrid = result.grid, result.tgrid
    if which == "step-identity":
        if coeffs is None or sources is None:
            raise ValueError("step-identity needs coeffs and sources")
        return step_energy_identity(result, coeffs, sources)

    dt, T, M = tgrid.dt, tgrid.t[-1], tgrid.M
    u, v = result.u.values, result.v.values
    shape = u.shape
    F1 = np.zeros(shape) if F1 is None else np.asarray(F1, dtype=float)
    F2 = np.zeros(shape) if F2 is None else np.asarray(F2, dtype=float)

    def l2sq(w_level):
        return discrete_norm(w_level, "l2", grid) ** 2

    def semi(w_level):
        d = np.diff(w_level) / grid.h
        return float(np.sum(grid.h * grid.a_mid * d * d))

    y = np.array([l2sq(u[k]) + l2sq(v[k]) for k in range(M + 1)])
    dissip = np.array([semi(u[k]) + semi(v[k]) for k in range(M + 1)])
    fsq = np.array([l2sq(F1[k]) + l2sq(F2[k]) for k in range(M + 1)])
    int_f = float(dt * np.sum(fsq[1:]))
    data0 = y[0] + int_f

    c = 4.0 * C0 + 1.0
    if c * dt >= 1.0:
        raise ValueError("discrete Gronwall needs (4 C0 + 1) dt < 1")
    c_gron = float(np.exp(c * T / (1.0 - c * dt)))

    if which == "E1":
        lhs = float(np.max(y)) + 2.0 * ell_lower * dt * float(np.sum(dissip[1:]))
        rhs = (c_gron * (1.0 + c * T) + 1.0) * data0
        return AuditReport.from_sides("energy-E1", lhs, rhs, tol=tol,
                                      components={"max_state": float(np.max(y)),
                                                  "dissipation": dt * float(np.sum(dissip[1:])),
                                                  "gronwall_constant": c_gron})
    if which == "E2":
        dtsq = np.array([l2sq((u[k + 1] - u[k]) / dt) + l2sq((v[k + 1] - v[k]) / dt)
                         for k in range(M)])
        kcal = (c_gron * (1.0 + c * T) + 1.0) * data0
        lhs = float(np.max([dt * np.sum(dtsq[:k + 1]) + ell_lower * dissip[k + 1]
                            for k in range(M)]))
        h0 = dissip[0]
        rhs = (kcal * (1.0 + T) + ell_upper * h0 + kcal) \
            * float(np.exp(deriv_bound * kcal / max(2.0 * ell_lower, 1e-300)))
        return AuditReport.from_sides("energy-E2", lhs, rhs, tol=tol,
                                      components={"initial_seminorm": h0,
                                                  "kcal": kcal})
    if which == "E3":
        op = assemble_degenerate_operator(None, grid)
        flux = np.array([l2sq(op.apply(u[k])) + l2sq(op.apply(v[k]))
                         for k in range(M + 1)])
        kcal = (c_gron * (1.0 + c * T) + 1.0) * data0
        lhs = float(np.max(dissip)) + ell_lower * dt * float(np.sum(flux[1:]))
        # Young with epsilon = ell_lower/2 on the quadratic form chain.
        rhs = dissip[0] + (2.0 / ell_lower) * (2.0 * C0 ** 2 * T * np.max(y) + int_f) \
            + 2.0 * (kcal + int_f) + kcal
        return AuditReport.from_sides("energy-E3", lhs, rhs, tol=tol,
                                      components={"kcal": kcal})
    if which == "linear-2.5":
        lhs = float(np.max(y)) + dt * float(np.sum(dissip[1:]))
        rhs = data0
        rep = AuditReport.from_sides("energy-linear-2.5", lhs, rhs,
                                     passed=True, components={
                                         "empirical_constant": lhs / rhs if rhs > 0 else np.nan})
        return rep
    raise ValueError(f"unknown energy check {which!r}")
