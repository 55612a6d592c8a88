"""Observation locations, neighbour search and regular-grid handling."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from math import comb

import numpy as np
from scipy.spatial import cKDTree

from .errors import DuplicateLocations, NotRegular, ValidationError

#: Below this many points the neighbour search uses the plain double loop.
BRUTE_FORCE_LIMIT = 256
GRID_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class LocationSet:
    """Two-by-two distinct points in R^d, 1 <= d <= 3.

    Parameters
    ----------
    coords : array_like, shape (n, d)
        Spatial coordinates. A 1-D input is treated as n points on a line.
    """

    coords: np.ndarray

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        if coords.ndim != 2:
            raise ValidationError("coordinates must be an (n, d) array")
        n, d = coords.shape
        if n < 2:
            raise ValidationError(f"need at least 2 locations, got {n}")
        if not 1 <= d <= 3:
            raise ValidationError(f"spatial dimension must be 1, 2 or 3, got {d}")
        if not np.all(np.isfinite(coords)):
            raise ValidationError("coordinates must be finite")
        if len(np.unique(coords, axis=0)) != n:
            raise DuplicateLocations("observation locations must be two-by-two distinct")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def d(self) -> int:
        return self.coords.shape[1]

    def __len__(self):
        return self.n

    @cached_property
    def min_separation(self) -> float:
        """Smallest pairwise distance between two locations."""
        dist, _ = cKDTree(self.coords).query(self.coords, k=2)
        return float(dist[:, 1].min())

    @cached_property
    def grid(self) -> "GridDescriptor":
        return detect_grid(self)


@dataclass(frozen=True, eq=False)
class GridDescriptor:
    is_regular: bool
    origin: np.ndarray
    spacing: float
    integer_coords: np.ndarray | None = field(default=None)

    @property
    def shape(self) -> tuple[int, ...]:
        """Extent of the bounding lattice in points per axis."""
        if not self.is_regular:
            raise NotRegular("locations are not on a regular grid")
        return tuple(int(v) + 1 for v in self.integer_coords.max(axis=0))

    @property
    def is_complete(self) -> bool:
        """True when every lattice point of the bounding box is observed."""
        return self.is_regular and int(np.prod(self.shape)) == len(self.integer_coords)


def detect_grid(loc: LocationSet) -> GridDescriptor:
    """Decide whether the locations lie on a uniform lattice.

    The spacing is the smallest positive difference between sorted distinct
    coordinate values on any axis, ignoring round-off sized gaps; the set is regular when every offset from
    the component-wise minimum is an integer multiple of that spacing.
    """
    coords = loc.coords
    origin = coords.min(axis=0)
    offsets = coords - origin
    steps = []
    for axis in range(loc.d):
        diffs = np.diff(np.unique(offsets[:, axis]))
        # gaps at round-off level belong to the same lattice value
        diffs = diffs[diffs > GRID_TOLERANCE * offsets[:, axis].max()]
        if len(diffs):
            steps.append(diffs.min())
    spacing = float(min(steps))
    scaled = offsets / spacing
    rounded = np.rint(scaled)
    regular = bool(np.all(np.abs(scaled - rounded) <= GRID_TOLERANCE))
    if not regular:
        return GridDescriptor(False, origin, spacing, None)
    return GridDescriptor(True, origin, spacing, rounded.astype(np.int64))


def _brute_pairs(n):
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return i.ravel(), j.ravel()


def _pairs_within(coords, radius):
    """Ordered candidate pairs (i, j) whose cells are adjacent at bucket size ``radius``.

    Every pair at distance <= radius is included (a superset is returned).
    """
    n, d = coords.shape
    if n < BRUTE_FORCE_LIMIT or radius <= 0:
        if radius <= 0:
            idx = np.arange(n)
            return idx, idx
        return _brute_pairs(n)
    # bucket slightly wider than the radius so pairs at exactly the radius never straddle two cells
    cells = np.floor((coords - coords.min(axis=0)) / (radius * (1 + 1e-9))).astype(np.int64)
    dims = cells.max(axis=0) + 1
    keys = np.ravel_multi_index(cells.T, dims)
    order = np.argsort(keys, kind="stable")
    uniq, start, counts = np.unique(keys[order], return_index=True, return_counts=True)
    all_i, all_j = [], []
    for offset in itertools.product((-1, 0, 1), repeat=d):
        nb = cells + np.asarray(offset)
        ok = np.all((nb >= 0) & (nb < dims), axis=1)
        src = np.flatnonzero(ok)
        nbkeys = np.ravel_multi_index(nb[ok].T, dims)
        pos = np.searchsorted(uniq, nbkeys)
        pos[pos == len(uniq)] = 0
        found = uniq[pos] == nbkeys
        src, pos = src[found], pos[found]
        cnt = counts[pos]
        total = int(cnt.sum())
        if total == 0:
            continue
        first = np.repeat(start[pos], cnt)
        within = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        all_i.append(np.repeat(src, cnt))
        all_j.append(order[first + within])
    return np.concatenate(all_i), np.concatenate(all_j)


def neighbor_pairs(loc: LocationSet, kernel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All ordered pairs (i, j) with non-zero kernel weight ``f(s_i - s_j)``.

    ``loc`` may also be a bare coordinate array, which skips validation.

    Returns
    -------
    i, j : ndarray of int
        Row-major ordered (sorted by i, then j).
    w : ndarray of float
        The kernel values at the corresponding lags.
    """
    if not isinstance(loc, LocationSet):
        coords = np.asarray(loc, dtype=float).reshape(len(loc), -1)
        if len(coords) == 0:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, np.zeros(0)
        if getattr(kernel, "lattice", False):
            loc = LocationSet(coords)
    if isinstance(loc, LocationSet):
        coords = loc.coords
    if getattr(kernel, "lattice", False):
        grid = loc.grid
        if not grid.is_regular:
            raise NotRegular(f"kernel {kernel} requires locations on a regular grid")
        coords = grid.integer_coords.astype(float)
    i, j = _pairs_within(coords, kernel.radius)
    w = kernel.evaluate(coords[i] - coords[j])
    keep = w != 0
    i, j, w = i[keep], j[keep], w[keep]
    order = np.lexsort((j, i))
    return i[order], j[order], w[order]


def _lag_offsets(d: int, m: int, h: int) -> np.ndarray:
    """Lag vectors with exactly ``m`` coordinates equal to +-h and the rest 0."""
    out = []
    for axes in itertools.combinations(range(d), m):
        for signs in itertools.product((-1, 1), repeat=m):
            v = np.zeros(d, dtype=np.int64)
            v[list(axes)] = h * np.asarray(signs)
            out.append(v)
    return np.array(out, dtype=np.int64).reshape(-1, d)


def _lattice_lookup(grid: GridDescriptor) -> np.ndarray:
    table = np.full(grid.shape, -1, dtype=np.int64)
    table[tuple(grid.integer_coords.T)] = np.arange(len(grid.integer_coords))
    return table


def grid_shift_pairs(loc: LocationSet, m: int, h: int):
    """Ordered (i, j) index pairs of m-way lag-h neighbours, found by shifting.

    Yields one pair of index arrays per lag vector; no distances are computed.
    """
    grid = loc.grid
    if not grid.is_regular:
        raise NotRegular("m-way lag-h neighbourhoods need a regular grid")
    if not 1 <= m <= loc.d:
        raise ValidationError(f"m must be in [1, {loc.d}], got {m}")
    if h < 1:
        raise ValidationError(f"h must be a positive integer, got {h}")
    table = _lattice_lookup(grid)
    shape = np.asarray(grid.shape)
    ic = grid.integer_coords
    for v in _lag_offsets(loc.d, m, h):
        target = ic + v
        inside = np.all((target >= 0) & (target < shape), axis=1)
        src = np.flatnonzero(inside)
        dst = table[tuple(target[inside].T)]
        present = dst >= 0
        yield src[present], dst[present]


def grid_neighbors(loc: LocationSet, center_index: int, m: int, h: int) -> list[int]:
    """Indices of the sampled m-way lag-h neighbours of one location."""
    grid = loc.grid
    if not grid.is_regular:
        raise NotRegular("m-way lag-h neighbourhoods need a regular grid")
    if not 1 <= m <= loc.d:
        raise ValidationError(f"m must be in [1, {loc.d}], got {m}")
    table = _lattice_lookup(grid)
    shape = np.asarray(grid.shape)
    center = grid.integer_coords[center_index]
    out = []
    for v in _lag_offsets(loc.d, m, h):
        target = center + v
        if np.all((target >= 0) & (target < shape)):
            idx = int(table[tuple(target)])
            if idx >= 0:
                out.append(idx)
    return out


def max_neighbors(d: int, m: int) -> int:
    return comb(d, m) * 2**m
