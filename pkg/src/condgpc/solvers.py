"""Steady-state diffusion solvers for gridded conductivity fields.

The governing balance is ``div(kappa grad u) = 0`` on an axis-aligned box
with Dirichlet values on the left and right boundaries.  In 2D the top and
bottom boundaries carry a prescribed inward flux density (zero by default,
which is a no-flow boundary).  Conductivities are sampled at grid points;
interface values use harmonic means, which keeps fluxes continuous across
jumps.

1D problems are solved with linear finite elements on node grids (the
element conductivity is the harmonic mean of its end nodes).  2D problems
use a cell-centered finite volume scheme on cell grids with two-point flux
approximation; Dirichlet boundaries connect through half-cell
transmissibilities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import solve_banded

from .grids import Field, Grid

__all__ = ["BoundaryConditions", "solve_diffusion", "boundary_fluxes"]


@dataclass(frozen=True)
class BoundaryConditions:
    """Dirichlet values left/right; prescribed inward flux density bottom/top (2D)."""

    left: float
    right: float
    bottom_flux: float = 0.0
    top_flux: float = 0.0

    def __post_init__(self) -> None:
        for name in ("left", "right", "bottom_flux", "top_flux"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValueError(f"boundary condition {name} must be finite, got {v}")
            object.__setattr__(self, name, v)


def _check_kappa(kappa: Field) -> np.ndarray:
    k = kappa.values
    if np.any(k <= 0):
        raise ValueError("conductivity must be strictly positive everywhere")
    return k


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * a * b / (a + b)


def solve_diffusion(kappa: Field, bc: BoundaryConditions) -> Field:
    """Solve the steady diffusion problem for the given conductivity field."""
    grid = kappa.grid
    if grid.ndim == 1:
        if grid.kind != "node":
            raise ValueError("1D solver expects a node grid")
        return Field(grid, _solve_1d(grid, _check_kappa(kappa), bc))
    if grid.kind != "cell":
        raise ValueError("2D solver expects a cell grid")
    return Field(grid, _solve_2d(grid, _check_kappa(kappa), bc))


def _solve_1d(grid: Grid, k: np.ndarray, bc: BoundaryConditions) -> np.ndarray:
    n = grid.shape[0]
    h = grid.spacing[0]
    ke = _harmonic(k[:-1], k[1:]) / h  # element conductance

    # tridiagonal stiffness in banded storage (upper, main, lower)
    main = np.zeros(n)
    main[:-1] += ke
    main[1:] += ke
    upper = np.concatenate([[0.0], -ke])
    lower = np.concatenate([-ke, [0.0]])
    rhs = np.zeros(n)

    # Dirichlet rows become identities; couplings move to the right-hand side
    rhs[1] += ke[0] * bc.left
    rhs[-2] += ke[-1] * bc.right
    main[0] = main[-1] = 1.0
    upper[1] = lower[-2] = 0.0  # off-diagonals of the identity rows
    lower[0] = upper[-1] = 0.0  # couplings of rows 1 and n-2 to the pinned nodes
    rhs[0], rhs[-1] = bc.left, bc.right

    ab = np.vstack([upper, main, lower])
    return solve_banded((1, 1), ab, rhs)


def _assemble_2d(grid: Grid, k: np.ndarray, bc: BoundaryConditions):
    n1, n2 = grid.shape
    dx, dy = grid.spacing
    kk = k.reshape(n1, n2)
    n = n1 * n2
    idx = np.arange(n).reshape(n1, n2)

    tx = _harmonic(kk[:-1, :], kk[1:, :]) * dy / dx  # faces between x-neighbors
    ty = _harmonic(kk[:, :-1], kk[:, 1:]) * dx / dy  # faces between y-neighbors
    tl = 2.0 * kk[0, :] * dy / dx  # half-cell link to the left boundary
    tr = 2.0 * kk[-1, :] * dy / dx

    diag = np.zeros((n1, n2))
    rows, cols, vals = [], [], []

    p, q = idx[:-1, :].ravel(), idx[1:, :].ravel()
    t = tx.ravel()
    rows += [p, q]
    cols += [q, p]
    vals += [-t, -t]
    diag[:-1, :] += tx
    diag[1:, :] += tx

    p, q = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    t = ty.ravel()
    rows += [p, q]
    cols += [q, p]
    vals += [-t, -t]
    diag[:, :-1] += ty
    diag[:, 1:] += ty

    diag[0, :] += tl
    diag[-1, :] += tr

    rhs = np.zeros(n)
    rhs[idx[0, :]] += tl * bc.left
    rhs[idx[-1, :]] += tr * bc.right
    # prescribed outward normal flux enters the balance as an extra source
    rhs[idx[:, 0]] += bc.bottom_flux * dx
    rhs[idx[:, -1]] += bc.top_flux * dx

    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag.ravel())
    A = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return A, rhs


def _solve_2d(grid: Grid, k: np.ndarray, bc: BoundaryConditions) -> np.ndarray:
    A, rhs = _assemble_2d(grid, k, bc)
    return spla.spsolve(A, rhs)


def boundary_fluxes(kappa: Field, u: Field, bc: BoundaryConditions) -> dict:
    """Total flux entering the domain through each boundary.

    For a converged solution the four totals sum to zero (discrete
    conservation).  1D grids report left and right only.
    """
    grid = kappa.grid
    k = _check_kappa(kappa)
    if grid.ndim == 1:
        ke = _harmonic(k[:-1], k[1:]) / grid.spacing[0]
        uu = u.values
        return {
            "left": float(ke[0] * (uu[0] - uu[1])),
            "right": float(ke[-1] * (uu[-1] - uu[-2])),
        }
    n1, n2 = grid.shape
    dx, dy = grid.spacing
    kk = k.reshape(n1, n2)
    uu = u.values.reshape(n1, n2)
    tl = 2.0 * kk[0, :] * dy / dx
    tr = 2.0 * kk[-1, :] * dy / dx
    return {
        "left": float(np.sum(tl * (bc.left - uu[0, :]))),
        "right": float(np.sum(tr * (bc.right - uu[-1, :]))),
        "bottom": float(bc.bottom_flux * dx * n1),
        "top": float(bc.top_flux * dx * n1),
    }
