"""Stationary correlation kernels for the log-conductivity prior.

Both families are products of per-axis factors, so on tensor grids their
eigendecomposition splits into 1D problems.  Kernels return correlation
matrices (unit variance); the field standard deviation is applied by the
expansion, not the kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["SquaredExponential", "SeparableExponential"]


def _pairwise(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return x[:, None] - y[None, :]


class _ProductKernel:
    """Common machinery for kernels of the form prod_a rho_a(|dx_a|)."""

    def __post_init__(self) -> None:
        length = self.length
        if np.ndim(length) == 0:
            length = float(length)
        else:
            length = tuple(float(v) for v in length)
        object.__setattr__(self, "length", length)

    def lengths_for(self, ndim: int) -> tuple[float, ...]:
        length = self.length
        if np.ndim(length) == 0:
            out = (float(length),) * ndim
        else:
            out = tuple(float(v) for v in length)
            if len(out) != ndim:
                raise ValueError(
                    f"kernel has {len(out)} correlation lengths but points have {ndim} coordinates"
                )
        if any(v <= 0 or not np.isfinite(v) for v in out):
            raise ValueError(f"correlation lengths must be positive and finite, got {out}")
        return out

    def axis_factor(self, axis: int, ndim: int):
        """1D correlation function for one axis, as ``rho(x, y) -> matrix``."""
        ell = self.lengths_for(ndim)[axis]

        def rho(x: np.ndarray, y: np.ndarray) -> np.ndarray:
            return self._rho1(_pairwise(np.asarray(x, float), np.asarray(y, float)), ell)

        return rho

    def __call__(self, X, Y=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = X if Y is None else np.atleast_2d(np.asarray(Y, dtype=float))
        if X.shape[1] != Y.shape[1]:
            raise ValueError("X and Y must have the same number of coordinates")
        lengths = self.lengths_for(X.shape[1])
        out = np.ones((X.shape[0], Y.shape[0]))
        for a, ell in enumerate(lengths):
            out *= self._rho1(_pairwise(X[:, a], Y[:, a]), ell)
        return out


@dataclass(frozen=True)
class SquaredExponential(_ProductKernel):
    """``exp(-sum_a (dx_a / l_a)^2)``; a scalar length gives the isotropic form."""

    length: float | tuple = 1.0

    @staticmethod
    def _rho1(d: np.ndarray, ell: float) -> np.ndarray:
        return np.exp(-((d / ell) ** 2))


@dataclass(frozen=True)
class SeparableExponential(_ProductKernel):
    """``exp(-sum_a |dx_a| / l_a)``, the product of per-axis exponentials."""

    length: float | tuple = 1.0

    @staticmethod
    def _rho1(d: np.ndarray, ell: float) -> np.ndarray:
        return np.exp(-np.abs(d) / ell)
