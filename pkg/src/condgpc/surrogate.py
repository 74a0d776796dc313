"""Polynomial chaos surrogate of the forward solution over the reduced coordinates.

The surrogate expands the PDE solution in normalized Hermite polynomials of
the conditional KL coordinates xi,

    u(x, xi) ~ sum_i c_i(x) Phi_i(xi),   |i| <= degree,

with coefficient fields computed by quadrature projection: solve the PDE at
each quadrature node's conductivity sample and weight the solutions by basis
values.  Because the basis is orthonormal, the mean is c_0 and the variance
is the sum of squared higher coefficients.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from pathlib import Path
from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .conditioning import ConditionalKL
from .grids import Field, Grid
from .quadrature import (
    QuadratureRule,
    default_rule,
    hermite_design,
    total_degree_indices,
)


class PointSurrogate:
    """Surrogate restricted to a fixed set of evaluation points.

    Holds the coefficient matrix interpolated to those points, so evaluating
    the surrogate costs one design-matrix build and one small matmul.  This is
    what makes MCMC over the surrogate cheap.
    """

    def __init__(self, indices: np.ndarray, coefficients: np.ndarray, points: np.ndarray):
        self.indices = np.asarray(indices, dtype=int)
        self.coefficients = np.asarray(coefficients, dtype=float)
        self.points = np.asarray(points, dtype=float)
        if self.coefficients.shape[0] != self.indices.shape[0]:
            raise ValueError("one coefficient row per multi-index required")

    @property
    def dim(self) -> int:
        return self.indices.shape[1]

    def __call__(self, xi: np.ndarray) -> np.ndarray:
        """Evaluate at one xi, returning one value per point."""
        return self.batch(np.atleast_2d(xi))[0]

    def batch(self, Xi: np.ndarray) -> np.ndarray:
        """Evaluate at many xi at once; rows of the result follow rows of Xi."""
        Xi = np.atleast_2d(np.asarray(Xi, dtype=float))
        if Xi.shape[1] != self.dim:
            raise ValueError(f"expected xi of dimension {self.dim}, got {Xi.shape[1]}")
        return hermite_design(Xi, self.indices) @ self.coefficients

    def linear_part(self) -> tuple[np.ndarray, np.ndarray]:
        """Constant and linear coefficients (b, A) with u ~ b + A^T xi.

        A has shape (dim, n_points).  Used to build a Gaussian approximation
        of the posterior for initializing MCMC chains.
        """
        totals = self.indices.sum(axis=1)
        b = self.coefficients[int(np.nonzero(totals == 0)[0][0])]
        A = np.zeros((self.dim, self.coefficients.shape[1]))
        for row in np.nonzero(totals == 1)[0]:
            axis = int(np.argmax(self.indices[row]))
            A[axis] = self.coefficients[row]
        return b, A


class PolynomialChaosSurrogate(BaseEstimator):
    """Quadrature-projected Hermite expansion of the forward map.

    Parameters
    ----------
    degree : total polynomial degree of the expansion.
    rule : optional QuadratureRule; by default a tensor rule with degree+1
        points per dimension (Smolyak past dimension 6).

    After fit: indices_, coefficients_ (n_terms x n_grid), rule_,
    conditional_, mean_field_, variance_field_, n_solves_.
    """

    def __init__(self, degree: int = 3, rule: QuadratureRule | None = None):
        self.degree = degree
        self.rule = rule

    def fit(self, conditional: ConditionalKL, solve: Callable[[Field], np.ndarray]):
        """Project PDE solves at quadrature nodes onto the Hermite basis.

        solve maps a conductivity Field to solution values on the same grid.
        Solves run in node order; any solver exception is re-raised with the
        offending node identified.
        """
        check_is_fitted(conditional)
        if not isinstance(self.degree, (int, np.integer)) or self.degree < 0:
            raise ValueError("degree must be a nonnegative integer")
        d = conditional.n_components_
        rule = self.rule if self.rule is not None else default_rule(d, self.degree)
        if rule.dim != d:
            raise ValueError(
                f"quadrature rule has dimension {rule.dim}, conditional model has {d}"
            )

        grid = conditional.base_.grid_
        solutions = np.empty((len(rule), grid.n_points))
        for m, node in enumerate(rule.nodes):
            _, kappa = conditional.sample(node)
            try:
                u = np.asarray(solve(kappa), dtype=float)
            except Exception as exc:
                raise RuntimeError(f"forward solve failed at quadrature node {m}") from exc
            if u.shape != (grid.n_points,):
                raise ValueError(f"solver returned shape {u.shape} at node {m}")
            solutions[m] = u

        indices = total_degree_indices(d, self.degree)
        design = hermite_design(rule.nodes, indices)
        self.indices_ = indices
        self.coefficients_ = (design * rule.weights[:, None]).T @ solutions
        self.rule_ = rule
        self.conditional_ = conditional
        self.grid_ = grid
        self.mean_field_ = Field(grid, self.coefficients_[0].copy())
        self.variance_field_ = Field(grid, np.sum(self.coefficients_[1:] ** 2, axis=0))
        self.n_solves_ = len(rule)
        return self

    def predict(self, xi: np.ndarray) -> Field:
        """Surrogate solution field at one xi."""
        check_is_fitted(self)
        return Field(self.grid_, self.predict_batch(np.atleast_2d(xi))[0])

    def predict_batch(self, Xi: np.ndarray) -> np.ndarray:
        check_is_fitted(self)
        Xi = np.atleast_2d(np.asarray(Xi, dtype=float))
        if Xi.shape[1] != self.indices_.shape[1]:
            raise ValueError(
                f"expected xi of dimension {self.indices_.shape[1]}, got {Xi.shape[1]}"
            )
        return hermite_design(Xi, self.indices_) @ self.coefficients_

    def mean(self) -> Field:
        check_is_fitted(self)
        return self.mean_field_

    def variance(self) -> Field:
        check_is_fitted(self)
        return self.variance_field_

    def at_points(self, X: np.ndarray) -> PointSurrogate:
        """Restrict the surrogate to arbitrary in-domain points.

        Each coefficient field is interpolated to the points once; the result
        evaluates as a plain multivariate polynomial.
        """
        check_is_fitted(self)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        coeffs = np.stack([self.grid_.interpolate(c, X) for c in self.coefficients_])
        return PointSurrogate(self.indices_, coeffs, X)

    def fingerprint(self) -> str:
        check_is_fitted(self)
        h = hashlib.sha256()
        h.update(self.indices_.tobytes())
        h.update(np.ascontiguousarray(self.coefficients_).tobytes())
        return h.hexdigest()

    def save(self, directory) -> None:
        """Write the surrogate as a directory of CSV coefficient fields.

        Layout: meta.json (dimension, degree, rule tag, fingerprints),
        indices.csv (one multi-index per row), coeff_<k>.csv (one Field per
        index, in index order).
        """
        check_is_fitted(self)
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        if self.rule_ is None:
            rule_tag, n_nodes = getattr(self, "_rule_tag", "unknown"), self.n_solves_
        else:
            rule_tag = (
                f"tensor-{int(round(len(self.rule_) ** (1.0 / self.rule_.dim)))}"
                if not np.any(self.rule_.weights < 0)
                else "sparse"
            )
            n_nodes = len(self.rule_)
        meta = {
            "dim": int(self.indices_.shape[1]),
            "degree": int(self.degree),
            "n_terms": int(self.indices_.shape[0]),
            "rule_tag": rule_tag,
            "n_nodes": int(n_nodes),
            "grid": self.grid_.to_dict(),
            "conditional_fingerprint": self.conditional_.fingerprint(),
            "fingerprint": self.fingerprint(),
        }
        (directory / "meta.json").write_text(json.dumps(meta, indent=2))
        np.savetxt(
            directory / "indices.csv",
            self.indices_,
            fmt="%d",
            delimiter=",",
            header=",".join(f"i{j + 1}" for j in range(self.indices_.shape[1])),
            comments="",
        )
        for k, coeff in enumerate(self.coefficients_):
            Field(self.grid_, coeff).to_csv(directory / f"coeff_{k:04d}.csv")

    @classmethod
    def load(cls, directory, conditional: ConditionalKL | None = None):
        """Rebuild a surrogate from save() output.

        If a conditional model is supplied its fingerprint is checked against
        the stored one; a mismatch warns rather than fails, since evaluation
        only needs the coefficients.
        """
        directory = Path(directory)
        meta = json.loads((directory / "meta.json").read_text())
        grid = Grid.from_dict(meta["grid"])
        indices = np.loadtxt(directory / "indices.csv", delimiter=",", skiprows=1, dtype=int)
        indices = np.atleast_2d(indices)
        if indices.shape != (meta["n_terms"], meta["dim"]):
            indices = indices.reshape(meta["n_terms"], meta["dim"])
        coefficients = np.empty((meta["n_terms"], grid.n_points))
        for k in range(meta["n_terms"]):
            coefficients[k] = Field.from_csv(directory / f"coeff_{k:04d}.csv", grid).values
        model = cls(degree=meta["degree"])
        model.indices_ = indices
        model.coefficients_ = coefficients
        model.grid_ = grid
        model.mean_field_ = Field(grid, coefficients[0].copy())
        model.variance_field_ = Field(grid, np.sum(coefficients[1:] ** 2, axis=0))
        model.n_solves_ = meta["n_nodes"]
        model.rule_ = None
        model._rule_tag = meta.get("rule_tag", "unknown")
        model.conditional_ = conditional
        if conditional is not None:
            if conditional.fingerprint() != meta["conditional_fingerprint"]:
                warnings.warn("conditional model fingerprint differs from the stored one")
        if model.fingerprint() != meta["fingerprint"]:
            raise ValueError("stored coefficients do not match their fingerprint")
        return model
