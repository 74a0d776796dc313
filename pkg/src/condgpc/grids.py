"""Structured grids and gridded scalar fields.

Two grid kinds cover the discretizations used by the solvers:

* ``node`` grids place points on the nodes of a uniform lattice, endpoints
  included, and carry trapezoid quadrature weights.  The 1D finite element
  solver works on these.
* ``cell`` grids place points at the centers of uniform cells and carry the
  cell measures as weights.  The 2D finite volume solver works on these.

Both kinds expose the same surface: point coordinates in a fixed ordering
(first axis varies slowest), quadrature weights, nearest-point snapping and
multilinear interpolation.  Fields pair a grid with one value per point and
serialize to CSV with full double precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Grid",
    "Field",
    "build_grid",
    "inner_product",
    "read_observations",
    "write_observations",
]

_GRID_KINDS = ("node", "cell")


def _as_extents(extents) -> tuple[tuple[float, float], ...]:
    out = []
    for ext in extents:
        lo, hi = (float(v) for v in ext)
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValueError(f"extent bounds must be finite, got {ext!r}")
        if not lo < hi:
            raise ValueError(f"extent must satisfy lo < hi, got {ext!r}")
        out.append((lo, hi))
    return tuple(out)


@dataclass(frozen=True)
class Grid:
    """Uniform structured grid on an axis-aligned box.

    Parameters
    ----------
    extents :
        Per-axis ``(lo, hi)`` bounds of the box.
    shape :
        Number of points per axis (nodes for ``kind="node"``, cells for
        ``kind="cell"``).
    kind :
        ``"node"`` or ``"cell"``.
    """

    extents: tuple[tuple[float, float], ...]
    shape: tuple[int, ...]
    kind: str = "node"

    def __post_init__(self) -> None:
        object.__setattr__(self, "extents", _as_extents(self.extents))
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        if self.kind not in _GRID_KINDS:
            raise ValueError(f"kind must be one of {_GRID_KINDS}, got {self.kind!r}")
        if len(self.extents) != len(self.shape):
            raise ValueError("extents and shape must have the same length")
        if len(self.shape) not in (1, 2):
            raise ValueError("only 1D and 2D grids are supported")
        minimum = 2 if self.kind == "node" else 1
        for n in self.shape:
            if n < minimum:
                raise ValueError(f"{self.kind} grids need at least {minimum} points per axis")

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def n_points(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def spacing(self) -> tuple[float, ...]:
        out = []
        for (lo, hi), n in zip(self.extents, self.shape):
            out.append((hi - lo) / (n - 1 if self.kind == "node" else n))
        return tuple(out)

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        """Per-axis point coordinates."""
        out = []
        for (lo, hi), n, h in zip(self.extents, self.shape, self.spacing):
            if self.kind == "node":
                ax = lo + h * np.arange(n)
                ax[-1] = hi  # guard against round-off drift at the far end
            else:
                ax = lo + h * (np.arange(n) + 0.5)
            ax.setflags(write=False)
            out.append(ax)
        return tuple(out)

    @cached_property
    def axis_weights(self) -> tuple[np.ndarray, ...]:
        """Per-axis quadrature weights (trapezoid for nodes, cell size for cells)."""
        out = []
        for n, h in zip(self.shape, self.spacing):
            if self.kind == "node":
                wa = np.full(n, h)
                wa[0] = wa[-1] = h / 2
            else:
                wa = np.full(n, h)
            wa.setflags(write=False)
            out.append(wa)
        return tuple(out)

    @cached_property
    def points(self) -> np.ndarray:
        """All point coordinates, shape ``(n_points, ndim)``, first axis slowest."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        pts.setflags(write=False)
        return pts

    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights, shape ``(n_points,)``; they sum to the box measure."""
        w = self.axis_weights[0]
        for wa in self.axis_weights[1:]:
            w = np.outer(w, wa).ravel()
        w = np.ascontiguousarray(w)
        w.setflags(write=False)
        return w

    @property
    def measure(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.extents]))

    def contains(self, X: np.ndarray, atol: float = 1e-9) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        ok = np.ones(X.shape[0], dtype=bool)
        for a, (lo, hi) in enumerate(self.extents):
            span = hi - lo
            ok &= (X[:, a] >= lo - atol * span) & (X[:, a] <= hi + atol * span)
        return ok

    def nearest_index(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Snap points to the nearest grid point.

        Returns ``(indices, distances)`` where ``indices`` are flat point
        indices and ``distances`` the Euclidean snap distances.  Points
        outside the box raise ``ValueError``.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.ndim:
            raise ValueError(f"expected points with {self.ndim} coordinates, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("points must be finite")
        inside = self.contains(X)
        if not np.all(inside):
            bad = X[~inside][0]
            raise ValueError(f"point {bad.tolist()} lies outside the grid extents {self.extents}")
        multi = []
        for a, (ax, n) in enumerate(zip(self.axes, self.shape)):
            h = self.spacing[a]
            ia = np.clip(np.round((X[:, a] - ax[0]) / h).astype(int), 0, n - 1)
            multi.append(ia)
        flat = np.ravel_multi_index(tuple(multi), self.shape)
        dist = np.linalg.norm(self.points[flat] - X, axis=1)
        return flat, dist

    def interpolate(self, values: np.ndarray, X) -> np.ndarray:
        """Multilinear interpolation of per-point ``values`` at locations ``X``.

        Exact at grid points and for multilinear functions.  Within the outer
        half-cell margin of a cell grid the value is held constant along the
        clamped axis.  Points outside the box raise ``ValueError``.
        """
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_points,):
            raise ValueError(f"values must have shape ({self.n_points},), got {values.shape}")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.ndim:
            raise ValueError(f"expected points with {self.ndim} coordinates, got shape {X.shape}")
        inside = self.contains(X)
        if not np.all(inside):
            bad = X[~inside][0]
            raise ValueError(f"point {bad.tolist()} lies outside the grid extents {self.extents}")
        grid_vals = values.reshape(self.shape)
        lows, fracs = [], []
        for a, (ax, n) in enumerate(zip(self.axes, self.shape)):
            h = self.spacing[a]
            t = np.clip((X[:, a] - ax[0]) / h, 0.0, n - 1.0)
            i0 = np.minimum(t.astype(int), n - 2) if n > 1 else np.zeros(len(t), dtype=int)
            lows.append(i0)
            fracs.append(t - i0 if n > 1 else np.zeros(len(t)))
        out = np.zeros(X.shape[0])
        for corner in range(2**self.ndim):
            weight = np.ones(X.shape[0])
            idx = []
            for a in range(self.ndim):
                hi_side = (corner >> a) & 1
                f = fracs[a]
                weight *= f if hi_side else 1.0 - f
                idx.append(np.minimum(lows[a] + hi_side, self.shape[a] - 1))
            out += weight * grid_vals[tuple(idx)]
        return out

    def to_dict(self) -> dict:
        return {
            "extents": [list(e) for e in self.extents],
            "shape": list(self.shape),
            "kind": self.kind,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Grid":
        return cls(
            extents=tuple(tuple(e) for e in data["extents"]),
            shape=tuple(data["shape"]),
            kind=data["kind"],
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Grid":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def build_grid(extents, counts) -> Grid:
    """Build the standard grid for the given box: 1D node grid, 2D cell grid."""
    extents = _as_extents(extents if hasattr(extents[0], "__len__") else [extents])
    counts = [int(c) for c in (counts if np.ndim(counts) else [counts])]
    kind = "node" if len(extents) == 1 else "cell"
    return Grid(extents=extents, shape=tuple(counts), kind=kind)


@dataclass(frozen=True)
class Field:
    """A scalar field sampled on a grid, one value per grid point."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if vals.shape != (self.grid.n_points,):
            raise ValueError(
                f"values must have shape ({self.grid.n_points},), got {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable) -> "Field":
        pts = grid.points
        vals = np.asarray(fn(*(pts[:, a] for a in range(grid.ndim))), dtype=float)
        return cls(grid, vals)

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "Field":
        return cls(grid, np.full(grid.n_points, float(value)))

    def __call__(self, X) -> np.ndarray:
        return self.interpolate(X)

    def interpolate(self, X) -> np.ndarray:
        return self.grid.interpolate(self.values, X)

    def inner(self, other: "Field") -> float:
        return inner_product(self, other)

    def norm(self) -> float:
        """Quadrature-weighted L2 norm."""
        return float(np.sqrt(self.grid.weights @ (self.values**2)))

    def to_csv(self, path) -> None:
        header = ",".join([f"x{a + 1}" for a in range(self.grid.ndim)] + ["value"])
        data = np.column_stack([self.grid.points, self.values])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path, grid: Grid) -> "Field":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] != grid.ndim + 1:
            raise ValueError(
                f"expected {grid.ndim + 1} columns in {path}, found {data.shape[1]}"
            )
        if data.shape[0] != grid.n_points:
            raise ValueError(
                f"expected {grid.n_points} rows in {path}, found {data.shape[0]}"
            )
        if not np.allclose(data[:, : grid.ndim], grid.points, atol=1e-9):
            raise ValueError(f"coordinates in {path} do not match the grid")
        return cls(grid, data[:, -1])


def inner_product(f: Field, g: Field) -> float:
    """Quadrature-weighted inner product of two fields on the same grid."""
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")
    return float(f.grid.weights @ (f.values * g.values))


def write_observations(path, X: np.ndarray, values: np.ndarray) -> None:
    """Write point observations as CSV: one row per point, coordinates then value."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    values = np.asarray(values, dtype=float)
    if X.shape[0] != values.shape[0]:
        raise ValueError("X and values must have the same length")
    header = ",".join([f"x{a + 1}" for a in range(X.shape[1])] + ["value"])
    np.savetxt(
        path,
        np.column_stack([X, values]),
        delimiter=",",
        header=header,
        comments="",
        fmt="%.17g",
    )


def read_observations(path, ndim: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Read point observations written by :func:`write_observations`."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] < 2:
        raise ValueError(f"{path} must have at least one coordinate column and a value column")
    if ndim is not None and data.shape[1] != ndim + 1:
        raise ValueError(f"expected {ndim + 1} columns in {path}, found {data.shape[1]}")
    return data[:, :-1], data[:, -1]
