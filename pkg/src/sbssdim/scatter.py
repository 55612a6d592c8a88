"""Local covariance (scatter) matrices of a spatial sample."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import DegenerateKernel, ValidationError
from .geometry import LocationSet, grid_shift_pairs, neighbor_pairs
from .kernels import GridLag, Identity, Kernel


@dataclass(frozen=True, eq=False)
class SpatialSample:
    """Observed field values ``values[i]`` at location ``loc.coords[i]``."""

    loc: LocationSet
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != self.loc.n:
            raise ValidationError(
                f"values must have shape ({self.loc.n}, p), got {np.shape(self.values)}"
            )
        if not np.all(np.isfinite(values)):
            raise ValidationError("field values must be finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_arrays(cls, coords, values) -> "SpatialSample":
        return cls(LocationSet(coords), values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def with_values(self, values) -> "SpatialSample":
        return SpatialSample(self.loc, values)


@dataclass(frozen=True, eq=False)
class ScatterMatrix:
    m: np.ndarray
    kernel: Kernel
    normalization: float
    centered: bool


class KernelWeights:
    """Sparse matrix of kernel weights f(s_i - s_j) for a fixed location set.

    Building it once lets repeated scatter computations on new field values
    at the same locations (bootstrap replicates) skip the neighbour search.
    """

    def __init__(self, loc: LocationSet, kernel: Kernel):
        self.kernel = kernel
        self.n = loc.n
        if isinstance(kernel, Identity):
            self.matrix = None
            self.normalization = 1.0
            return
        i, j, w = neighbor_pairs(loc, kernel)
        self.normalization = float(np.dot(w, w)) / loc.n
        if self.normalization == 0.0:
            raise DegenerateKernel(f"kernel {kernel} has no location pairs in its support")
        self.matrix = sparse.csr_matrix((w, (i, j)), shape=(loc.n, loc.n))

    def local_covariance(self, xc: np.ndarray, normalized: bool = True) -> np.ndarray:
        if self.matrix is None:
            m = xc.T @ xc / self.n
        else:
            scale = self.n * np.sqrt(self.normalization) if normalized else self.n
            m = xc.T @ (self.matrix @ xc) / scale
        return (m + m.T) / 2


def _center(values, centered):
    return values - values.mean(axis=0) if centered else values


def scatter(
    sample: SpatialSample,
    kernel: Kernel,
    centered: bool = True,
    normalized: bool = True,
    weights: KernelWeights | None = None,
) -> ScatterMatrix:
    """Sample local covariance matrix of ``sample`` for one kernel.

    With ``normalized`` the double sum is divided by n * sqrt(F_{n,f});
    otherwise by n alone. The identity kernel always gives the ordinary
    (1/n) covariance. Centering subtracts the sample mean first.
    """
    if weights is None:
        weights = KernelWeights(sample.loc, kernel)
    xc = _center(sample.values, centered)
    m = weights.local_covariance(xc, normalized)
    return ScatterMatrix(m, kernel, weights.normalization, centered)


def scatter_grid(
    sample: SpatialSample,
    m_way: int,
    h: int,
    centered: bool = True,
    normalized: bool = True,
) -> ScatterMatrix:
    """m-way lag-h local covariance on a regular grid, by index shifting."""
    xc = _center(sample.values, centered)
    p = sample.p
    acc = np.zeros((p, p))
    total = 0
    for src, dst in grid_shift_pairs(sample.loc, m_way, h):
        total += len(src)
        acc += xc[src].T @ xc[dst]
    kernel = GridLag(m_way, h)
    if total == 0:
        raise DegenerateKernel(f"no {m_way}-way lag-{h} neighbours in the sample")
    n = sample.n
    scale = np.sqrt(n * total) if normalized else n
    m = acc / scale
    return ScatterMatrix((m + m.T) / 2, kernel, total / n, centered)
