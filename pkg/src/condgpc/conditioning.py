"""Conditioning a truncated KL expansion on point measurements of the field.

Measuring the log-field at points ``x_i`` constrains the KL coefficients to
an affine subspace.  With ``G = Lambda^{1/2} R`` (``R[n, i]`` the n-th mode
at the i-th observation) the posterior of the standardized coefficients is
Gaussian with mean ``mu_tilde = G (G^T G)^{-1} dY / sigma`` and covariance
``M_tilde = I - G (G^T G)^{-1} G^T``, the orthogonal projector onto the
complement of ``range(G)``.  Diagonalizing ``B = Lambda^{1/2} M_tilde
Lambda^{1/2}`` yields a reduced expansion with ``d = N - N_m`` modes that
reproduces every observation exactly and has zero variance there.

The projector is computed from a reduced QR factorization of ``G`` rather
than by inverting ``Sigma = sigma^2 G^T G``: the result is identical in
exact arithmetic and stays idempotent to round-off when ``Sigma`` is badly
conditioned.  ``Sigma`` itself can be numerically rank-deficient when the
correlation length is large compared to the observation spacing or when
observations coincide; a greedy pivoted Cholesky selects a maximal
well-conditioned subset first, and the dropped observations are reproduced
through their correlation with the retained ones.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .grids import Field
from .kl import KarhunenLoeve

__all__ = ["SubsetSelection", "select_full_rank_subset", "ConditionalKL"]


@dataclass(frozen=True)
class SubsetSelection:
    """Outcome of the pivoted-Cholesky observation screening."""

    kept: np.ndarray  # indices into the observation list, ascending
    dropped: np.ndarray
    pivots: np.ndarray  # pivot magnitudes in selection order


def pivoted_cholesky_rank(S: np.ndarray, rtol: float) -> tuple[list[int], list[float]]:
    """Greedy max-pivot Cholesky; stops when a pivot falls below rtol * first."""
    S = np.array(S, dtype=float)
    n = S.shape[0]
    perm = np.arange(n)
    chosen: list[int] = []
    pivots: list[float] = []
    first = None
    for k in range(n):
        diag = np.diag(S)[k:]
        j = int(np.argmax(diag)) + k
        pivot = S[j, j]
        if first is None:
            first = max(pivot, 0.0)
        if pivot <= 0 or (first > 0 and pivot < rtol * first):
            break
        S[[k, j]] = S[[j, k]]
        S[:, [k, j]] = S[:, [j, k]]
        perm[[k, j]] = perm[[j, k]]
        chosen.append(int(perm[k]))
        pivots.append(float(pivot))
        root = np.sqrt(pivot)
        S[k + 1 :, k] /= root
        S[k + 1 :, k + 1 :] -= np.outer(S[k + 1 :, k], S[k + 1 :, k])
    return chosen, pivots


def select_full_rank_subset(kl: KarhunenLoeve, X, rtol: float = 1e-10) -> SubsetSelection:
    """Select observations whose truncated covariance is numerically full rank.

    ``X`` holds observation locations (snapped to the grid internally).  The
    covariance of the truncated expansion at those points is screened by
    pivoted Cholesky with relative tolerance ``rtol``.
    """
    check_is_fitted(kl, "eigenvalues_")
    idx, _ = kl.grid_.nearest_index(X)
    R = kl.eigenfunctions_[idx, :].T
    G = np.sqrt(kl.eigenvalues_)[:, None] * R
    sigma = kl.sigma_ if kl.sigma_ > 0 else 1.0
    cov = sigma**2 * (G.T @ G)
    chosen, pivots = pivoted_cholesky_rank(cov, rtol)
    kept = np.sort(np.asarray(chosen, dtype=int))
    dropped = np.setdiff1d(np.arange(len(idx)), kept)
    return SubsetSelection(kept=kept, dropped=dropped, pivots=np.asarray(pivots))


class ConditionalKL(BaseEstimator):
    """Truncated KL expansion conditioned on exact point observations.

    Fit with observation locations ``X`` (shape ``(N_m, ndim)``) and observed
    field values ``y``.  When the observations are log-conductivity
    measurements, pass ``y = log(kappa_obs)``.

    Parameters
    ----------
    base :
        A fitted :class:`KarhunenLoeve`.
    nugget :
        Observation noise variance added to the observation covariance.
        Zero (default) treats observations as exact, which makes the
        conditional mean interpolate them and the conditional variance
        vanish there.
    subset_rtol :
        Relative pivot tolerance for the observation screening.
    rank_cutoff :
        Reduced eigenvalues below ``rank_cutoff * first`` are discarded.

    Attributes (after ``fit``)
    --------------------------
    mu_tilde_ : (N,) conditional mean of the standardized coefficients
    projection_ : (N, N) conditional coefficient covariance M-tilde
    reduced_eigenvalues_ : (d,) eigenvalues of the reduced expansion
    combination_ : (N, d) orthonormal combination matrix V
    reduced_modes_ : (n_points, d) reduced eigenfunctions
    mean_field_ : Field, conditional mean of the log-field
    n_components_ : d
    kept_, dropped_ : observation screening outcome (indices into X)
    observed_indices_ : flat grid indices of the retained observations
    """

    def __init__(
        self,
        base: KarhunenLoeve | None = None,
        nugget: float = 0.0,
        subset_rtol: float = 1e-10,
        rank_cutoff: float = 1e-8,
    ):
        self.base = base
        self.nugget = nugget
        self.subset_rtol = subset_rtol
        self.rank_cutoff = rank_cutoff

    # ------------------------------------------------------------------ fit

    def fit(self, X, y) -> "ConditionalKL":
        kl = self.base
        if kl is None:
            raise ValueError("a fitted KarhunenLoeve is required as base")
        check_is_fitted(kl, "eigenvalues_")
        nugget = float(self.nugget)
        if nugget < 0 or not np.isfinite(nugget):
            raise ValueError(f"nugget must be nonnegative, got {self.nugget}")

        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if X.size == 0:
            X = X.reshape(0, kl.grid_.ndim)
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]} values")
        if y.size and not np.all(np.isfinite(y)):
            raise ValueError("observed values must be finite")

        n_modes = kl.n_terms_
        sigma = kl.sigma_

        if X.shape[0] == 0:
            # no observations: the conditional model is the prior
            self._finalize(
                kl,
                mu_tilde=np.zeros(n_modes),
                projection=np.eye(n_modes),
                kept=np.array([], dtype=int),
                dropped=np.array([], dtype=int),
                pivots=np.array([]),
                obs_idx=np.array([], dtype=int),
                obs_values=np.array([]),
                snap=np.array([]),
            )
            return self

        idx_all, snap_all = kl.grid_.nearest_index(X)
        selection = select_full_rank_subset(kl, X, rtol=float(self.subset_rtol))
        if selection.dropped.size:
            warnings.warn(
                f"{selection.dropped.size} of {X.shape[0]} observations are linearly "
                "dependent under the truncated covariance and were dropped",
                stacklevel=2,
            )
        kept = selection.kept
        idx = idx_all[kept]
        y_kept = y[kept]

        R = kl.eigenfunctions_[idx, :].T
        G = np.sqrt(kl.eigenvalues_)[:, None] * R
        delta = y_kept - kl.mean_.values[idx]

        if sigma == 0.0:
            if np.max(np.abs(delta), initial=0.0) > 1e-8:
                raise ValueError(
                    "sigma is zero but observations deviate from the mean field"
                )
            mu_tilde = np.zeros(n_modes)
            projection = np.eye(n_modes) - G @ np.linalg.pinv(G.T @ G) @ G.T
        elif nugget == 0.0:
            q, r = np.linalg.qr(G)
            mu_tilde = q @ solve_triangular(r.T, delta, lower=True) / sigma
            projection = np.eye(n_modes) - q @ q.T
        else:
            cov = sigma**2 * (G.T @ G) + nugget * np.eye(len(idx))
            sol = np.linalg.solve(cov, np.column_stack([delta, sigma * G.T]))
            mu_tilde = sigma * (G @ sol[:, 0])
            projection = np.eye(n_modes) - sigma * G @ sol[:, 1:]
            projection = 0.5 * (projection + projection.T)

        self._finalize(
            kl,
            mu_tilde=mu_tilde,
            projection=projection,
            kept=kept,
            dropped=selection.dropped,
            pivots=selection.pivots,
            obs_idx=idx,
            obs_values=y_kept,
            snap=snap_all,
        )
        return self

    def _finalize(self, kl, *, mu_tilde, projection, kept, dropped, pivots, obs_idx, obs_values, snap):
        n_modes = kl.n_terms_
        sqrt_lam = np.sqrt(kl.eigenvalues_)
        B = sqrt_lam[:, None] * projection * sqrt_lam[None, :]
        B = 0.5 * (B + B.T)
        lam, vec = np.linalg.eigh(B)
        lam = lam[::-1]
        vec = vec[:, ::-1]

        expected = n_modes - len(obs_idx)
        cutoff = float(self.rank_cutoff) * max(lam[0], 0.0) if n_modes else 0.0
        numerical = int(np.sum(lam > cutoff))
        d = expected
        if numerical < expected:
            warnings.warn(
                f"reduced spectrum has {numerical} eigenvalues above the cutoff "
                f"but {expected} were expected; truncating to {numerical}",
                stacklevel=3,
            )
            d = numerical

        lam_red = np.clip(lam[:d], 0.0, None)
        combo = vec[:, :d].copy()
        modes = kl.eigenfunctions_ @ combo
        # sign convention on the reduced modes; flip the combination in lockstep
        for k in range(d):
            col = modes[:, k]
            big = np.abs(col) > 1e-8 * np.abs(col).max()
            if col[int(np.argmax(big))] < 0:
                modes[:, k] = -col
                combo[:, k] = -combo[:, k]
        mean_values = kl.mean_.values + kl.sigma_ * (kl.eigenfunctions_ @ (sqrt_lam * mu_tilde))

        self.base_ = kl
        self.mu_tilde_ = mu_tilde
        self.projection_ = projection
        self.reduced_eigenvalues_ = lam_red
        self.combination_ = combo
        self.reduced_modes_ = modes
        self.mean_field_ = Field(kl.grid_, mean_values)
        self.n_components_ = d
        self.kept_ = kept
        self.dropped_ = dropped
        self.pivots_ = pivots
        self.observed_indices_ = obs_idx
        self.observed_values_ = obs_values
        self.snap_distance_ = float(np.max(snap)) if len(snap) else 0.0

    # ------------------------------------------------------------ evaluation

    def predict(self, X, return_std: bool = False):
        """Conditional mean of the log-field at arbitrary points."""
        check_is_fitted(self, "mean_field_")
        mean = self.mean_field_.interpolate(X)
        if not return_std:
            return mean
        std = np.sqrt(np.clip(self.base_.grid_.interpolate(self.variance().values, X), 0.0, None))
        return mean, std

    def sample(self, xi) -> tuple[Field, Field]:
        """One conditional realization: ``(log_field, exp_field)``."""
        values = self.sample_batch(np.atleast_2d(xi))[0]
        log_field = Field(self.base_.grid_, values)
        return log_field, Field(self.base_.grid_, np.exp(values))

    def sample_batch(self, Xi) -> np.ndarray:
        """Conditional log-field realizations for rows of ``Xi``."""
        check_is_fitted(self, "mean_field_")
        Xi = np.atleast_2d(np.asarray(Xi, dtype=float))
        if Xi.shape[1] != self.n_components_:
            raise ValueError(
                f"expected coefficient vectors of length {self.n_components_}, got {Xi.shape[1]}"
            )
        if not np.all(np.isfinite(Xi)):
            raise ValueError("coefficients must be finite")
        basis = self.reduced_modes_ * np.sqrt(self.reduced_eigenvalues_)
        return self.mean_field_.values[None, :] + self.base_.sigma_ * (Xi @ basis.T)

    def variance(self) -> Field:
        """Pointwise conditional variance of the log-field."""
        check_is_fitted(self, "mean_field_")
        var = self.base_.sigma_**2 * (self.reduced_modes_**2 @ self.reduced_eigenvalues_)
        return Field(self.base_.grid_, var)

    def spectrum_table(self) -> np.ndarray:
        check_is_fitted(self, "mean_field_")
        lam = self.reduced_eigenvalues_
        total = float(lam.sum()) or 1.0
        cum = np.cumsum(lam) / total
        return np.column_stack([np.arange(1, len(lam) + 1), lam, cum])

    def fingerprint(self) -> str:
        """Stable hash of the conditioned model, for artifact compatibility checks."""
        check_is_fitted(self, "mean_field_")
        h = hashlib.sha256()
        h.update(json.dumps(self.base_.grid_.to_dict(), sort_keys=True).encode())
        for arr in (
            self.base_.eigenvalues_,
            self.reduced_eigenvalues_,
            self.mu_tilde_,
            self.observed_indices_.astype(float),
            self.observed_values_,
            np.array([self.base_.sigma_]),
        ):
            h.update(np.ascontiguousarray(arr, dtype=float).tobytes())
        return h.hexdigest()
