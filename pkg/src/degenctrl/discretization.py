"""Spatial/temporal grids, the conservative flux stencil for -(a u_x)_x,
discrete weighted norms and the degenerate Sturm-Liouville eigenbasis.

The grid is uniform with nodes x_i = i h, h = 1/(N+1); the coefficient is
sampled at cell midpoints so the flux form never evaluates a at the
degeneracy point x = 0.  Trapezoid quadrature matches the piecewise-linear
field representation and keeps the adjoint identities exactly discrete.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import NumericalError

__all__ = [
    "Grid", "TimeGrid", "SpaceTimeField", "DegenerateOperator", "EigenBasis",
    "make_grid", "make_time_grid", "node_mask",
    "assemble_degenerate_operator", "discrete_norm", "nonlocal_integral",
    "eigenbasis", "space_inner",
]


@dataclass(frozen=True)
class Grid:
    """Uniform spatial grid on [0,1] with N interior nodes."""

    N: int
    h: float
    x: np.ndarray          # nodes, length N + 2
    x_mid: np.ndarray      # cell midpoints, length N + 1
    a_mid: np.ndarray      # coefficient at midpoints, length N + 1
    w_trapz: np.ndarray    # trapezoid weights, length N + 2

    @property
    def interior(self):
        return self.x[1:-1]


def make_grid(N: int, coefficient) -> Grid:
    """Grid with midpoint samples of the diffusion coefficient.

    ``coefficient`` is anything with vectorized attribute ``a`` (or a plain
    callable).  a(1/2 h) > 0 is required: midpoints are interior even though
    a(0) = 0.
    """
    if N < 2:
        raise ValueError("need at least 2 interior nodes")
    h = 1.0 / (N + 1)
    x = np.linspace(0.0, 1.0, N + 2)
    x_mid = 0.5 * (x[:-1] + x[1:])
    a_fn = coefficient.a if hasattr(coefficient, "a") else coefficient
    a_mid = np.asarray(a_fn(x_mid), dtype=float)
    if np.any(a_mid <= 0) or not np.all(np.isfinite(a_mid)):
        raise ValueError("coefficient must be positive and finite at all midpoints")
    w = np.full(N + 2, h)
    w[0] = w[-1] = 0.5 * h
    return Grid(N=N, h=h, x=x, x_mid=x_mid, a_mid=a_mid, w_trapz=w)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time levels t_k = k dt on [0, T]."""

    M: int
    dt: float
    t: np.ndarray          # length M + 1


def make_time_grid(T: float, M: int) -> TimeGrid:
    if T <= 0 or M < 1:
        raise ValueError("need T > 0 and M >= 1")
    return TimeGrid(M=M, dt=T / M, t=np.linspace(0.0, T, M + 1))


def node_mask(grid: Grid, interval) -> np.ndarray:
    """Boolean mask of nodes strictly inside the open interval."""
    lo, hi = interval
    return (grid.x > lo) & (grid.x < hi)


@dataclass
class SpaceTimeField:
    """Scalar field sampled on the tensor grid (time level, node)."""

    values: np.ndarray     # shape (M + 1, N + 2)
    grid: Grid
    tgrid: TimeGrid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = (self.tgrid.M + 1, self.grid.N + 2)
        if self.values.shape != expected:
            raise ValueError(f"field shape {self.values.shape} != {expected}")

    @classmethod
    def zeros(cls, grid, tgrid):
        return cls(np.zeros((tgrid.M + 1, grid.N + 2)), grid, tgrid)

    def copy(self):
        return SpaceTimeField(self.values.copy(), self.grid, self.tgrid)


@dataclass(frozen=True)
class DegenerateOperator:
    """Flux-form stencil L u = -(a u_x)_x with homogeneous Dirichlet data.

    Acting on interior nodes i = 1..N:
        (L u)_i = -[a_{i+1/2} (u_{i+1} - u_i) - a_{i-1/2} (u_i - u_{i-1})] / h^2
    Symmetric positive semidefinite; banded storage is (diag, off) with off
    diagonals -a_{i+1/2} / h^2 between interior neighbours.
    """

    grid: Grid
    diag: np.ndarray       # length N
    off: np.ndarray        # length N - 1 (between interior nodes)

    def apply(self, u_full: np.ndarray) -> np.ndarray:
        """Apply to a full node array (boundary values participate in the
        flux but the output is zero at the boundary rows)."""
        u = np.asarray(u_full, dtype=float)
        g, h2 = self.grid, self.grid.h ** 2
        flux = g.a_mid * np.diff(u, axis=-1) / h2      # a_{i+1/2} (u_{i+1}-u_i)/h^2
        out = np.zeros_like(u)
        out[..., 1:-1] = -(flux[..., 1:] - flux[..., :-1])
        return out


def assemble_degenerate_operator(coefficient, grid: Grid) -> DegenerateOperator:
    h2 = grid.h ** 2
    am = grid.a_mid
    diag = (am[:-1] + am[1:]) / h2
    off = -am[1:-1] / h2
    return DegenerateOperator(grid=grid, diag=diag, off=off)


def space_inner(u, v, grid: Grid) -> float:
    """Trapezoid inner product; exact h * sum over interior for
    zero-boundary fields (the form used by every duality identity)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return float(grid.h * np.dot(u[1:-1], v[1:-1]))


def nonlocal_integral(snapshot, grid: Grid) -> float:
    """Trapezoid quadrature of a node array over [0,1]."""
    return float(np.dot(grid.w_trapz, np.asarray(snapshot, dtype=float)))


def discrete_norm(snapshot, kind: str, grid: Grid, *, operator=None,
                  weight=None) -> float:
    """Discrete norms: "l2", "h1a", "h2a" or "weighted-l2".

    h1a adds the midpoint-difference seminorm weighted by a_{i+1/2}; h2a
    adds the flux-stencil second difference.  weighted-l2 multiplies the
    squared snapshot by ``weight`` (nonnegative node array) before
    trapezoid quadrature.
    """
    u = np.asarray(snapshot, dtype=float)
    if kind == "l2":
        return float(np.sqrt(np.dot(grid.w_trapz, u * u)))
    if kind == "h1a":
        du = np.diff(u) / grid.h
        semi = float(np.sum(grid.h * grid.a_mid * du * du))
        return float(np.sqrt(np.dot(grid.w_trapz, u * u) + semi))
    if kind == "h2a":
        op = operator or assemble_degenerate_operator(None, grid)
        lu = op.apply(u)
        extra = float(np.dot(grid.w_trapz, lu * lu))
        return float(np.sqrt(discrete_norm(u, "h1a", grid) ** 2 + extra))
    if kind == "weighted-l2":
        w = np.asarray(weight, dtype=float)
        if np.any(w < 0):
            raise ValueError("weight field must be nonnegative")
        return float(np.sqrt(np.dot(grid.w_trapz, w * u * u)))
    raise ValueError(f"unknown norm kind {kind!r}")


@dataclass(frozen=True)
class EigenBasis:
    """Leading eigenpairs of the flux stencil, orthonormal in discrete L2
    (trapezoid inner product over interior nodes)."""

    modes: np.ndarray        # shape (count, N + 2), zero at the boundary
    eigenvalues: np.ndarray  # ascending, length count
    grid: Grid

    @property
    def count(self):
        return self.modes.shape[0]

    def project(self, u_full):
        """Coefficients <u, w_i> in the discrete L2 product."""
        u = np.asarray(u_full, dtype=float)
        return self.grid.h * self.modes[:, 1:-1] @ u[..., 1:-1].T

    def expand(self, coeffs):
        """Node array(s) from modal coefficients."""
        c = np.asarray(coeffs, dtype=float)
        return c.T @ self.modes


def eigenbasis(coefficient, grid: Grid, count: int) -> EigenBasis:
    """First ``count`` eigenpairs of -(a w_x)_x = lambda w, ascending."""
    if count > grid.N:
        raise ValueError("cannot request more modes than interior nodes")
    op = assemble_degenerate_operator(coefficient, grid)
    try:
        vals, vecs = scipy.linalg.eigh_tridiagonal(
            op.diag, op.off, select="i", select_range=(0, count - 1))
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:  # pragma: no cover
        raise NumericalError(f"tridiagonal eigensolver failed: {exc}") from exc
    order = np.argsort(vals)
    vals = vals[order]
    vecs = vecs[:, order]
    modes = np.zeros((count, grid.N + 2))
    modes[:, 1:-1] = (vecs / np.sqrt(grid.h)).T        # orthonormal in h-weighted dot
    # Sign convention: first interior lobe positive.
    signs = np.sign(modes[:, 1])
    signs[signs == 0] = 1.0
    modes *= signs[:, None]
    return EigenBasis(modes=modes, eigenvalues=vals, grid=grid)
