"""Truncated Karhunen-Loeve expansion of a stationary Gaussian log-field.

The expansion is built by the Nystrom method: with quadrature weights ``w``
and correlation matrix ``C`` on the grid points, the symmetric matrix
``W^{1/2} C W^{1/2}`` is diagonalized and eigenfunctions are recovered as
``eps_n = W^{-1/2} v_n``.  The eigenfunctions are orthonormal under the
discrete inner product ``<f, g> = sum_i w_i f_i g_i`` and the eigenvalues
sum to the domain measure (unit-variance correlation).

On 2D tensor grids both kernel families factor across axes, so the
eigenproblem is solved per axis and combined through Kronecker products.
This is algebraically the same eigenproblem (the weighted kernel matrix is
a Kronecker product) and keeps large grids cheap.

A field realization is ``Y = mean + sigma * sum_n sqrt(lambda_n) eps_n xi_n``
with iid standard normal ``xi``.
"""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .grids import Field, Grid

__all__ = ["lognormal_moments", "KarhunenLoeve"]


def lognormal_moments(mean: float, std: float) -> tuple[float, float]:
    """Gaussian log-space parameters matching a lognormal mean and standard deviation.

    Returns ``(mu_g, sigma_g)`` such that ``exp(N(mu_g, sigma_g^2))`` has the
    given mean and standard deviation.  ``std = 0`` gives the degenerate
    constant field.
    """
    mean = float(mean)
    std = float(std)
    if not (np.isfinite(mean) and mean > 0):
        raise ValueError(f"lognormal mean must be positive, got {mean}")
    if not (np.isfinite(std) and std >= 0):
        raise ValueError(f"lognormal std must be nonnegative, got {std}")
    s2 = np.log1p((std / mean) ** 2)
    return float(np.log(mean) - 0.5 * s2), float(np.sqrt(s2))


def _fix_signs(modes: np.ndarray) -> np.ndarray:
    """Flip each column so its first significant entry is positive."""
    out = modes.copy()
    for k in range(out.shape[1]):
        col = out[:, k]
        big = np.abs(col) > 1e-8 * np.abs(col).max()
        first = int(np.argmax(big))
        if col[first] < 0:
            out[:, k] = -col
    return out


class KarhunenLoeve(BaseEstimator):
    """Truncated KL expansion of a Gaussian field on a grid.

    Parameters
    ----------
    kernel :
        Correlation kernel (unit variance); must be callable on point arrays
        and expose per-axis factors for the separable fast path.
    sigma :
        Field standard deviation; ``0`` degenerates to the constant mean.
    mean :
        Field mean, a scalar or a :class:`Field` on the fit grid.
    n_terms :
        Fixed number of retained modes.  Mutually exclusive with ``energy``.
    energy :
        Retain the smallest number of modes whose eigenvalue sum reaches this
        fraction of the total.  Defaults to ``0.95`` when ``n_terms`` is None.
    drop_tol :
        Eigenvalues below ``drop_tol * lambda_1`` count as numerically zero.
    method :
        ``"auto"`` (separable fast path on 2D tensor grids, dense otherwise),
        ``"dense"``, or ``"separable"``.

    Attributes (after ``fit``)
    --------------------------
    grid_ : Grid
    eigenvalues_ : (n_terms_,) retained eigenvalues, descending
    eigenfunctions_ : (n_points, n_terms_) discretely orthonormal modes
    spectrum_ : all eigenvalues of the discretized operator, descending
    n_terms_ : retained mode count
    energy_ : fraction of total eigenvalue sum captured by the truncation
    mean_ : Field with the mean
    """

    def __init__(
        self,
        kernel=None,
        sigma: float = 1.0,
        mean=0.0,
        n_terms: int | None = None,
        energy: float | None = None,
        drop_tol: float = 1e-12,
        method: str = "auto",
    ):
        self.kernel = kernel
        self.sigma = sigma
        self.mean = mean
        self.n_terms = n_terms
        self.energy = energy
        self.drop_tol = drop_tol
        self.method = method

    # ------------------------------------------------------------------ fit

    def fit(self, grid: Grid, y=None) -> "KarhunenLoeve":
        if not isinstance(grid, Grid):
            raise TypeError(f"fit expects a Grid, got {type(grid).__name__}")
        if self.kernel is None:
            raise ValueError("a correlation kernel is required")
        sigma = float(self.sigma)
        if not (np.isfinite(sigma) and sigma >= 0):
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")
        if self.n_terms is not None and self.energy is not None:
            raise ValueError("pass either n_terms or energy, not both")
        method = self.method
        if method not in ("auto", "dense", "separable"):
            raise ValueError(f"unknown method {method!r}")
        if method == "auto":
            method = "separable" if grid.ndim == 2 else "dense"
        if method == "separable" and grid.ndim == 1:
            method = "dense"

        self._warn_if_underresolved(grid)

        if method == "dense":
            spectrum, modes_full = self._eig_dense(grid)
            lookup = None
        else:
            spectrum, lookup = self._eig_separable(grid)
            modes_full = None

        total = float(spectrum.sum())
        if total <= 0:
            raise ValueError("discretized kernel has no positive eigenvalues")
        positive = int(np.sum(spectrum > float(self.drop_tol) * spectrum[0]))

        if self.n_terms is not None:
            n_req = int(self.n_terms)
            if n_req < 1:
                raise ValueError(f"n_terms must be >= 1, got {self.n_terms}")
            if n_req > positive:
                warnings.warn(
                    f"requested {n_req} modes but only {positive} are numerically "
                    f"nonzero; truncating to {positive}",
                    stacklevel=2,
                )
            n_keep = min(n_req, positive)
        else:
            target = 0.95 if self.energy is None else float(self.energy)
            if not 0 < target <= 1:
                raise ValueError(f"energy must be in (0, 1], got {self.energy}")
            frac = np.cumsum(spectrum) / total
            n_keep = int(np.searchsorted(frac, target - 1e-12) + 1)
            n_keep = min(n_keep, positive)

        if modes_full is not None:
            modes = modes_full[:, :n_keep]
        else:
            modes = self._assemble_separable_modes(grid, lookup, n_keep)
        modes = _fix_signs(modes)

        mean_field = self._mean_field(grid)

        self.grid_ = grid
        self.spectrum_ = spectrum
        self.eigenvalues_ = spectrum[:n_keep].copy()
        self.eigenfunctions_ = modes
        self.n_terms_ = n_keep
        self.energy_ = float(spectrum[:n_keep].sum() / total)
        self.trace_ = total
        self.mean_ = mean_field
        self.sigma_ = sigma
        return self

    def _warn_if_underresolved(self, grid: Grid) -> None:
        if not hasattr(self.kernel, "lengths_for"):
            return
        lengths = self.kernel.lengths_for(grid.ndim)
        for ell, h in zip(lengths, grid.spacing):
            if ell / h < 4:
                warnings.warn(
                    f"correlation length {ell} is covered by fewer than 4 grid "
                    f"spacings ({h}); the spectrum may be inaccurate",
                    stacklevel=3,
                )
                return

    def _eig_dense(self, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
        C = self.kernel(grid.points)
        sw = np.sqrt(grid.weights)
        B = sw[:, None] * C * sw[None, :]
        B = 0.5 * (B + B.T)
        lam, vec = np.linalg.eigh(B)
        lam = lam[::-1]
        vec = vec[:, ::-1]
        self._warn_if_indefinite(lam)
        lam = np.clip(lam, 0.0, None)
        return lam, vec / sw[:, None]

    def _eig_separable(self, grid: Grid):
        axis_eigs = []
        for a in range(grid.ndim):
            rho = self.kernel.axis_factor(a, grid.ndim)
            ax = grid.axes[a]
            wa = grid.axis_weights[a]
            sw = np.sqrt(wa)
            B = sw[:, None] * rho(ax, ax) * sw[None, :]
            B = 0.5 * (B + B.T)
            lam, vec = np.linalg.eigh(B)
            lam = lam[::-1]
            vec = vec[:, ::-1]
            self._warn_if_indefinite(lam)
            axis_eigs.append((np.clip(lam, 0.0, None), vec / sw[:, None]))
        lam_prod = np.outer(axis_eigs[0][0], axis_eigs[1][0]).ravel()
        # stable sort keeps ties in (i1, i2) lexicographic order
        order = np.argsort(-lam_prod, kind="stable")
        lookup = (axis_eigs, order, grid.shape)
        return lam_prod[order], lookup

    @staticmethod
    def _warn_if_indefinite(lam_desc: np.ndarray) -> None:
        if lam_desc[-1] < -1e-10 * max(lam_desc[0], 1e-300):
            warnings.warn(
                "discretized kernel matrix is indefinite; negative eigenvalues "
                "were clipped to zero",
                stacklevel=3,
            )

    @staticmethod
    def _assemble_separable_modes(grid: Grid, lookup, n_keep: int) -> np.ndarray:
        axis_eigs, order, shape = lookup
        i1, i2 = np.unravel_index(order[:n_keep], shape)
        modes = np.empty((grid.n_points, n_keep))
        e1 = axis_eigs[0][1]
        e2 = axis_eigs[1][1]
        for k in range(n_keep):
            modes[:, k] = np.outer(e1[:, i1[k]], e2[:, i2[k]]).ravel()
        return modes

    def _mean_field(self, grid: Grid) -> Field:
        if isinstance(self.mean, Field):
            if self.mean.grid != grid:
                raise ValueError("mean field lives on a different grid")
            return self.mean
        return Field.constant(grid, float(self.mean))

    # ------------------------------------------------------------ evaluation

    def sample(self, xi) -> Field:
        """Realization of the field for one coefficient vector ``xi``."""
        values = self.sample_batch(np.atleast_2d(xi))[0]
        return Field(self.grid_, values)

    def sample_batch(self, Xi) -> np.ndarray:
        """Realizations for rows of ``Xi``; returns values of shape (m, n_points)."""
        check_is_fitted(self, "eigenvalues_")
        Xi = np.atleast_2d(np.asarray(Xi, dtype=float))
        if Xi.shape[1] != self.n_terms_:
            raise ValueError(f"expected coefficient vectors of length {self.n_terms_}, got {Xi.shape[1]}")
        if not np.all(np.isfinite(Xi)):
            raise ValueError("coefficients must be finite")
        basis = self.eigenfunctions_ * np.sqrt(self.eigenvalues_)
        return self.mean_.values[None, :] + self.sigma_ * (Xi @ basis.T)

    def variance(self) -> Field:
        """Pointwise variance of the truncated expansion."""
        check_is_fitted(self, "eigenvalues_")
        var = self.sigma_**2 * (self.eigenfunctions_**2 @ self.eigenvalues_)
        return Field(self.grid_, var)

    def mode(self, n: int) -> Field:
        check_is_fitted(self, "eigenvalues_")
        return Field(self.grid_, self.eigenfunctions_[:, n])

    def spectrum_table(self) -> np.ndarray:
        """Columns: mode index (1-based), eigenvalue, cumulative energy fraction."""
        check_is_fitted(self, "spectrum_")
        cum = np.cumsum(self.spectrum_) / self.trace_
        return np.column_stack([np.arange(1, len(self.spectrum_) + 1), self.spectrum_, cum])

    def save_spectrum(self, path) -> None:
        np.savetxt(
            path,
            self.spectrum_table(),
            delimiter=",",
            header="index,eigenvalue,cumulative_energy",
            comments="",
            fmt=["%d", "%.17g", "%.17g"],
        )
