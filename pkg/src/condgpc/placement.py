"""Measurement placement guided by the surrogate's solution-variance field.

The strategy: find critical points (local maxima, and saddles in 2D) of the
conditional variance of the surrogate solution, rank them by variance, and
take the top N_k.  When there are too few critical points, the domain is
split into N_k equal blocks and peak-free blocks contribute their variance
maxima.  Uniform and random baselines are provided for comparison runs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .grids import Field, Grid


@dataclass(frozen=True)
class PlacementResult:
    """Selected measurement locations in descending score order.

    provenance marks how each location was chosen: "critical-point" or
    "block-fallback".
    """

    locations: np.ndarray
    scores: np.ndarray
    provenance: tuple[str, ...]
    indices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "locations", np.atleast_2d(np.asarray(self.locations, float)))
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=float))
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=int))
        if len({tuple(row) for row in self.locations}) != len(self.locations):
            raise ValueError("selected locations must be distinct")

    def __len__(self) -> int:
        return len(self.indices)

    def to_csv(self, path) -> None:
        ndim = self.locations.shape[1]
        header = ",".join(f"x{j + 1}" for j in range(ndim)) + ",score,provenance"
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for loc, score, tag in zip(self.locations, self.scores, self.provenance):
                coords = ",".join(f"{v:.17g}" for v in loc)
                fh.write(f"{coords},{score:.17g},{tag}\n")


def _neighbor_offsets(ndim: int, connectivity: str):
    if ndim == 1:
        return [(-1,), (1,)]
    if connectivity == "all":
        return [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)]
    return [(-1, 0), (1, 0), (0, -1), (0, 1)]


def find_critical_points(variance: Field) -> list[tuple[float, int]]:
    """Strict local maxima (and 2D saddles) of a variance field.

    Returns (value, flat grid index) pairs sorted by value descending, ties
    broken by lexicographically smaller coordinates.  Boundary points are
    compared only against the neighbors they have.  Saddles are detected by
    opposite-sign second differences along the two axes together with a
    strict two-neighbor maximum along the negative-curvature axis.
    """
    grid = variance.grid
    v = variance.values
    if np.any(v < -1e-12 * max(1.0, np.abs(v).max())):
        raise ValueError("variance field must be nonnegative")
    shape = grid.shape
    arr = v.reshape(shape)
    found = {}

    it = np.ndindex(*shape)
    for pos in it:
        val = arr[pos]
        is_max = True
        for off in _neighbor_offsets(grid.ndim, "all"):
            nb = tuple(p + o for p, o in zip(pos, off))
            if all(0 <= n < s for n, s in zip(nb, shape)):
                if arr[nb] >= val:
                    is_max = False
                    break
        if is_max:
            found[pos] = val
            continue
        if grid.ndim != 2:
            continue
        i, j = pos
        if not (0 < i < shape[0] - 1 and 0 < j < shape[1] - 1):
            continue
        dxx = arr[i + 1, j] - 2 * val + arr[i - 1, j]
        dyy = arr[i, j + 1] - 2 * val + arr[i, j - 1]
        if dxx * dyy >= 0:
            continue
        if dxx < 0:
            axis_max = arr[i + 1, j] < val and arr[i - 1, j] < val
        else:
            axis_max = arr[i, j + 1] < val and arr[i, j - 1] < val
        if axis_max:
            found[pos] = val

    items = [(val, int(np.ravel_multi_index(pos, shape))) for pos, val in found.items()]
    items.sort(key=lambda t: (-t[0], np.unravel_index(t[1], shape)))
    return items


def _block_slices(grid: Grid, n_blocks: int):
    """Partition the domain into n_blocks equal boxes, as index masks."""
    if grid.ndim == 1:
        (lo, hi), = grid.extents
        edges = np.linspace(lo, hi, n_blocks + 1)
        x = grid.points[:, 0]
        return [
            (x >= edges[b]) & (x <= edges[b + 1] if b == n_blocks - 1 else x < edges[b + 1])
            for b in range(n_blocks)
        ]
    # factor n_blocks as r x c minimizing block aspect mismatch
    (lox, hix), (loy, hiy) = grid.extents
    lenx, leny = hix - lox, hiy - loy
    best = None
    for r in range(1, n_blocks + 1):
        if n_blocks % r:
            continue
        c = n_blocks // r
        mismatch = abs(lenx / r - leny / c)
        if best is None or mismatch < best[0]:
            best = (mismatch, r, c)
    _, r, c = best
    ex = np.linspace(lox, hix, r + 1)
    ey = np.linspace(loy, hiy, c + 1)
    X = grid.points
    masks = []
    for bi in range(r):
        mx = (X[:, 0] >= ex[bi]) & (X[:, 0] <= ex[bi + 1] if bi == r - 1 else X[:, 0] < ex[bi + 1])
        for bj in range(c):
            my = (X[:, 1] >= ey[bj]) & (
                X[:, 1] <= ey[bj + 1] if bj == c - 1 else X[:, 1] < ey[bj + 1]
            )
            masks.append(mx & my)
    return masks


def _separated(candidate: np.ndarray, chosen: list[np.ndarray], min_separation: float) -> bool:
    return all(np.linalg.norm(candidate - c) >= min_separation for c in chosen)


def select_locations(
    variance: Field, n_select: int, min_separation: float = 0.0
) -> PlacementResult:
    """Pick n_select measurement locations by descending variance score.

    Critical points first; if they run out, each peak-free block of an
    n_select-way equal partition contributes its variance maximum, and block
    candidates are consumed in descending variance order.  A positive
    min_separation skips candidates closer than that to an already selected
    point; if the quota then cannot be met the result is shorter and a
    warning is issued.
    """
    grid = variance.grid
    if not 1 <= n_select <= grid.n_points:
        raise ValueError("n_select must be between 1 and the grid point count")
    critical = find_critical_points(variance)

    chosen_idx: list[int] = []
    chosen_pts: list[np.ndarray] = []
    tags: list[str] = []
    for val, flat in critical:
        if len(chosen_idx) >= n_select:
            break
        pt = grid.points[flat]
        if min_separation > 0 and not _separated(pt, chosen_pts, min_separation):
            continue
        chosen_idx.append(flat)
        chosen_pts.append(pt)
        tags.append("critical-point")

    if len(chosen_idx) < n_select:
        v = variance.values
        candidates = []
        for mask in _block_slices(grid, n_select):
            inside = np.nonzero(mask)[0]
            if inside.size == 0 or any(flat in inside for flat in chosen_idx):
                continue
            best = inside[np.argmax(v[inside])]
            candidates.append((v[best], int(best)))
        candidates.sort(key=lambda t: (-t[0], np.unravel_index(t[1], grid.shape)))
        for val, flat in candidates:
            if len(chosen_idx) >= n_select:
                break
            if flat in chosen_idx:
                continue
            pt = grid.points[flat]
            if min_separation > 0 and not _separated(pt, chosen_pts, min_separation):
                continue
            chosen_idx.append(flat)
            chosen_pts.append(pt)
            tags.append("block-fallback")

    if len(chosen_idx) < n_select:
        warnings.warn(
            f"only {len(chosen_idx)} of {n_select} locations satisfy the separation constraint"
        )
    idx = np.array(chosen_idx, dtype=int)
    return PlacementResult(
        locations=grid.points[idx],
        scores=variance.values[idx],
        provenance=tuple(tags),
        indices=idx,
    )


def baseline_locations(grid: Grid, n_select: int, strategy: str, seed=None) -> np.ndarray:
    """Comparison-arm locations: "uniform" spacing or seeded "random" draws.

    Uniform in 1D places points at k/(n+1) across the domain, snapped to the
    grid; in 2D it uses the centers of an equal-block tiling.  Random draws
    distinct grid points.  Returns flat grid indices.
    """
    if not 1 <= n_select <= grid.n_points:
        raise ValueError("n_select must be between 1 and the grid point count")
    if strategy == "uniform":
        if grid.ndim == 1:
            (lo, hi), = grid.extents
            targets = lo + (hi - lo) * np.arange(1, n_select + 1) / (n_select + 1)
            idx, _ = grid.nearest_index(targets[:, None])
        else:
            centers = []
            for mask in _block_slices(grid, n_select):
                inside = np.nonzero(mask)[0]
                if inside.size == 0:
                    continue
                mid = grid.points[inside].mean(axis=0)
                centers.append(mid)
            idx, _ = grid.nearest_index(np.array(centers))
        idx = np.unique(idx)
        if idx.size < n_select:
            warnings.warn("uniform placement collapsed onto fewer distinct grid points")
        return idx
    if strategy == "random":
        rng = np.random.default_rng(seed)
        return np.sort(rng.choice(grid.n_points, size=n_select, replace=False))
    raise ValueError(f"unknown strategy {strategy!r}; use 'uniform' or 'random'")
