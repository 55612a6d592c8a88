"""Spatial kernel functions and their normalisation constants.

Kernel spec strings, used on the command line and in JSON output::

    ring:r1:r2    indicator of r1 < |s| <= r2
    ball:r        indicator of |s| <= r
    lag:m:h       m-way lag-h grid neighbours (regular grids only)

Several kernels are separated by commas, e.g. ``ring:0:2,ring:2:4``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import DegenerateKernel, ValidationError
from .geometry import LocationSet, neighbor_pairs

LATTICE_TOL = 1e-9


class Kernel:
    """Symmetric weight function on lag vectors."""

    #: kernel is evaluated on integer lattice offsets rather than raw lags
    lattice = False
    #: satisfies f(0) = 0, as required by the dimension tests
    conforming = True

    @property
    def radius(self) -> float:
        raise NotImplementedError

    def evaluate(self, lags) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, lag) -> float:
        lag = np.atleast_1d(np.asarray(lag, dtype=float))
        return float(self.evaluate(lag[None, :])[0])

    def spec(self) -> str:
        raise NotImplementedError

    def __str__(self):
        return self.spec()


def _norms(lags):
    lags = np.asarray(lags, dtype=float)
    return np.sqrt((lags * lags).sum(axis=-1))


@dataclass(frozen=True)
class Identity(Kernel):
    """f_0(s) = I(s = 0); yields the ordinary covariance matrix."""

    conforming = False

    @property
    def radius(self):
        return 0.0

    def evaluate(self, lags):
        return np.all(np.asarray(lags) == 0, axis=-1).astype(float)

    def spec(self):
        return "identity"


@dataclass(frozen=True)
class Ring(Kernel):
    r1: float
    r2: float

    def __post_init__(self):
        if not (self.r1 >= 0 and self.r2 > self.r1):
            raise ValidationError(f"ring kernel needs 0 <= r1 < r2, got ({self.r1}, {self.r2})")

    @property
    def radius(self):
        return float(self.r2)

    def evaluate(self, lags):
        h = _norms(lags)
        return ((h > self.r1) & (h <= self.r2)).astype(float)

    def spec(self):
        return f"ring:{_fmt(self.r1)}:{_fmt(self.r2)}"


@dataclass(frozen=True)
class Ball(Kernel):
    """Indicator of |s| <= r. Includes the origin, so f(0) = 1."""

    r: float
    conforming = False

    def __post_init__(self):
        if not self.r > 0:
            raise ValidationError(f"ball kernel needs r > 0, got {self.r}")

    @property
    def radius(self):
        return float(self.r)

    def evaluate(self, lags):
        return (_norms(lags) <= self.r).astype(float)

    def spec(self):
        return f"ball:{_fmt(self.r)}"


@dataclass(frozen=True)
class GridLag(Kernel):
    """f(s) = I(s in {-h,0,h}^d, |s|_1 = h m), in lattice units."""

    m: int
    h: int
    lattice = True

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValidationError(f"grid kernel needs integer m >= 1, got {self.m}")
        if int(self.h) != self.h or self.h < 1:
            raise ValidationError(f"grid kernel needs integer h >= 1, got {self.h}")

    @property
    def radius(self):
        return self.h * math.sqrt(self.m)

    def evaluate(self, lags):
        a = np.abs(np.asarray(lags, dtype=float))
        zero = a <= LATTICE_TOL
        at_h = np.abs(a - self.h) <= LATTICE_TOL
        ok = np.all(zero | at_h, axis=-1) & (at_h.sum(axis=-1) == self.m)
        return ok.astype(float)

    def spec(self):
        return f"lag:{self.m}:{self.h}"


IDENTITY = Identity()


def _fmt(x):
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


def supports_disjoint(k1: Kernel, k2: Kernel) -> bool:
    """Exact test of f1 * f2 == 0 everywhere.

    Mixed ring/ball versus grid comparisons take the lattice spacing as one
    length unit.
    """
    if isinstance(k1, GridLag) and isinstance(k2, GridLag):
        return (k1.m, k1.h) != (k2.m, k2.h)
    if isinstance(k2, GridLag):
        k1, k2 = k2, k1
    if isinstance(k1, GridLag):
        norm = k1.radius
        return float(k2.evaluate(np.array([[norm]]))[0]) == 0.0
    if isinstance(k1, Ball) and isinstance(k2, Ball):
        return False
    if isinstance(k2, Ball):
        k1, k2 = k2, k1
    if isinstance(k1, Ball):
        return not k2.r1 < k1.r
    return max(k1.r1, k2.r1) >= min(k1.r2, k2.r2)


class KernelSet:
    """Ordered collection of k >= 1 kernels f_1, ..., f_k."""

    def __init__(self, kernels):
        kernels = tuple(kernels)
        if not kernels:
            raise ValidationError("at least one kernel is required")
        for k in kernels:
            if not isinstance(k, Kernel) or isinstance(k, Identity):
                raise ValidationError(f"not a usable local covariance kernel: {k!r}")
        self.kernels = kernels
        self.disjoint_supports = all(
            supports_disjoint(a, b) for a, b in combinations(kernels, 2)
        )
        if not self.disjoint_supports:
            warnings.warn(
                "kernel supports overlap; the chi-square null distribution does not apply",
                stacklevel=2,
            )

    def __len__(self):
        return len(self.kernels)

    def __iter__(self):
        return iter(self.kernels)

    def __getitem__(self, i):
        return self.kernels[i]

    @property
    def conforming(self) -> bool:
        return all(k.conforming for k in self.kernels)

    def spec(self) -> str:
        return ",".join(k.spec() for k in self.kernels)

    def __repr__(self):
        return f"KernelSet({self.spec()!r})"


def parse_kernel(text: str) -> Kernel:
    parts = text.strip().lower().split(":")
    try:
        if parts[0] == "ring" and len(parts) == 3:
            return Ring(float(parts[1]), float(parts[2]))
        if parts[0] == "ball" and len(parts) == 2:
            return Ball(float(parts[1]))
        if parts[0] == "lag" and len(parts) == 3:
            return GridLag(int(parts[1]), int(parts[2]))
    except ValueError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"bad number in kernel spec {text!r}") from None
    raise ValidationError(f"unrecognised kernel spec {text!r}; expected ring:r1:r2, ball:r or lag:m:h")


def parse_kernels(text: str) -> KernelSet:
    items = [t for t in text.split(",") if t.strip()]
    return KernelSet(parse_kernel(t) for t in items)


def normalization(loc: LocationSet, kernel: Kernel) -> float:
    """F_{n,f} = (1/n) sum_{i,j} f(s_i - s_j)^2."""
    if isinstance(kernel, Identity):
        return 1.0
    _, _, w = neighbor_pairs(loc, kernel)
    value = float(np.dot(w, w)) / loc.n
    if value == 0.0:
        raise DegenerateKernel(f"kernel {kernel} has no location pairs in its support")
    return value


def cross_normalization(loc: LocationSet, k1: Kernel, k2: Kernel) -> float:
    """F_{n,f1,f2} = (1/n) sum_{i,j} f1(s_i - s_j) f2(s_i - s_j)."""
    i1, j1, w1 = neighbor_pairs(loc, k1)
    i2, j2, w2 = neighbor_pairs(loc, k2)
    n = loc.n
    key1 = i1 * n + j1
    key2 = i2 * n + j2
    _, a, b = np.intersect1d(key1, key2, assume_unique=True, return_indices=True)
    return float(np.dot(w1[a], w2[b])) / n
