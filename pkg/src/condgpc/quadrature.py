"""Normalized Hermite polynomials and Gauss-Hermite quadrature rules.

Everything here is expressed with respect to the standard Gaussian weight,
i.e. probabilists' Hermite polynomials rescaled to unit norm:

    E[phi_i(Z) phi_j(Z)] = delta_ij,  Z ~ N(0, 1).

Multivariate bases are tensor products indexed by total-degree multi-index
sets.  Two quadrature constructions are provided: the full tensor rule and a
Smolyak sparse rule with linear level growth, which keeps node counts
manageable once the dimension exceeds a handful.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from math import comb

import numpy as np
from numpy.polynomial.hermite_e import hermegauss


def hermite_value(degree: int, x):
    """Evaluate the normalized probabilists' Hermite polynomial.

    Uses the stable three-term recurrence on the normalized family:
    phi_{k+1}(x) = (x phi_k(x) - sqrt(k) phi_{k-1}(x)) / sqrt(k+1).
    """
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    x = np.asarray(x, dtype=float)
    prev = np.ones_like(x)
    if degree == 0:
        return prev
    cur = x.copy()
    for k in range(1, degree):
        prev, cur = cur, (x * cur - np.sqrt(k) * prev) / np.sqrt(k + 1)
    return cur


def _hermite_table(x: np.ndarray, max_degree: int) -> np.ndarray:
    """All normalized Hermite values up to max_degree, shape (max_degree+1, *x.shape)."""
    table = np.zeros((max_degree + 1,) + x.shape)
    table[0] = 1.0
    if max_degree >= 1:
        table[1] = x
    for k in range(1, max_degree):
        table[k + 1] = (x * table[k] - np.sqrt(k) * table[k - 1]) / np.sqrt(k + 1)
    return table


def total_degree_indices(dim: int, degree: int) -> np.ndarray:
    """Multi-indices with |i| <= degree, graded by total degree.

    Within each total degree the indices are ordered reverse-lexicographically,
    so for dim=2, degree=2 the order is (0,0), (1,0), (0,1), (2,0), (1,1), (0,2).
    The number of rows is C(dim + degree, dim).
    """
    if dim < 1:
        raise ValueError("dim must be positive")
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    rows = []
    for total in range(degree + 1):
        block = [idx for idx in product(range(total + 1), repeat=dim) if sum(idx) == total]
        block.sort(reverse=True)
        rows.extend(block)
    return np.array(rows, dtype=int)


def hermite_design(points: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Design matrix Phi[m, j] = prod_d phi_{indices[j, d]}(points[m, d])."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    indices = np.asarray(indices, dtype=int)
    if points.shape[1] != indices.shape[1]:
        raise ValueError(
            f"points have dimension {points.shape[1]} but indices have {indices.shape[1]}"
        )
    table = _hermite_table(points, int(indices.max(initial=0)))
    design = np.ones((points.shape[0], indices.shape[0]))
    for j, multi in enumerate(indices):
        for d in range(points.shape[1]):
            if multi[d] > 0:
                design[:, j] *= table[multi[d], :, d]
    return design


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights for integration against the standard Gaussian in R^d.

    Weights sum to one for tensor rules; Smolyak weights can be negative but
    still sum to one.
    """

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))
        weights = np.asarray(self.weights, dtype=float)
        if nodes.shape[0] != weights.shape[0]:
            raise ValueError("nodes and weights must have the same length")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def __len__(self) -> int:
        return self.nodes.shape[0]

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Weighted sum over nodes; values has shape (n_nodes, ...)."""
        values = np.asarray(values, dtype=float)
        if values.shape[0] != len(self):
            raise ValueError("values must have one row per node")
        return np.tensordot(self.weights, values, axes=1)


def gauss_hermite(dim: int, n_points: int, node_budget: int = 1_000_000) -> QuadratureRule:
    """Full tensor Gauss-Hermite rule with n_points per dimension.

    Exact for polynomials of per-dimension degree up to 2 n_points - 1.
    Node count is n_points ** dim, so this is only usable in low dimension;
    exceeding node_budget raises instead of exhausting memory.
    """
    if dim < 1:
        raise ValueError("dim must be positive")
    if n_points < 1:
        raise ValueError("n_points must be positive")
    if n_points**dim > node_budget:
        raise ValueError(
            f"tensor rule would need {n_points**dim} nodes, over the budget of {node_budget}"
        )
    x, w = hermegauss(n_points)
    w = w / w.sum()
    nodes = np.array(list(product(x, repeat=dim)))
    weights = np.prod(np.array(list(product(w, repeat=dim))), axis=1)
    return QuadratureRule(nodes, weights)


def _compositions(total: int, parts: int):
    """All tuples of `parts` positive integers summing to `total`."""
    if parts == 1:
        yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def smolyak_gauss_hermite(dim: int, level: int) -> QuadratureRule:
    """Sparse Gauss-Hermite rule via the Smolyak combination formula.

    Uses linear growth (the level-l univariate rule has l points) and merges
    duplicate nodes across the combination terms.  Exact for total-degree
    polynomials up to 2 level - 1.
    """
    if dim < 1:
        raise ValueError("dim must be positive")
    if level < 1:
        raise ValueError("level must be positive")
    q = level + dim - 1
    store: dict[tuple, float] = {}
    rules = {m: hermegauss(m) for m in range(1, level + 1)}
    for total in range(max(dim, q - dim + 1), q + 1):
        coeff = (-1) ** (q - total) * comb(dim - 1, q - total)
        for levels in _compositions(total, dim):
            axis_nodes = [rules[m][0] for m in levels]
            axis_weights = [rules[m][1] / rules[m][1].sum() for m in levels]
            for pick in product(*[range(m) for m in levels]):
                key = tuple(round(axis_nodes[d][pick[d]], 12) for d in range(dim))
                weight = coeff * np.prod([axis_weights[d][pick[d]] for d in range(dim)])
                store[key] = store.get(key, 0.0) + weight
    items = sorted(store.items())
    nodes = np.array([k for k, _ in items])
    weights = np.array([v for _, v in items])
    keep = np.abs(weights) > 1e-14
    return QuadratureRule(nodes[keep], weights[keep])


# Above this dimension a tensor rule with degree+1 points per axis gets
# unaffordable, so the default construction switches to Smolyak.
TENSOR_DIM_LIMIT = 6


def default_rule(dim: int, degree: int) -> QuadratureRule:
    """Quadrature adequate for projecting onto a total-degree basis.

    Tensor rule with degree+1 points per dimension when dim <= 6, otherwise a
    Smolyak rule at level degree+1.  Both integrate products of basis
    polynomials up to the stated degree exactly.
    """
    if dim <= TENSOR_DIM_LIMIT:
        return gauss_hermite(dim, degree + 1)
    return smolyak_gauss_hermite(dim, degree + 1)
