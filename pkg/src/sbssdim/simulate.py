"""Simulated spatial blind source separation data.

Latent fields are independent zero-mean Gaussian random fields with Matérn
correlation plus iid standard normal noise channels; the observed field is
``x(s) = mu + Omega z(s)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg, special
from scipy.spatial import cKDTree, distance

from .errors import FactorizationFailure, TooLarge, ValidationError
from .geometry import LocationSet
from .kernels import KernelSet, parse_kernels
from .scatter import SpatialSample

MAX_DENSE_N = 5000
JITTER = 1e-10
PATTERNS = ("uniform", "skewed", "grid")


@dataclass(frozen=True)
class MaternParams:
    nu: float
    phi: float

    def __post_init__(self):
        if not (self.nu > 0 and self.phi > 0):
            raise ValidationError(f"Matern parameters must be positive, got nu={self.nu}, phi={self.phi}")


def matern(h, params: MaternParams):
    """Matérn correlation ``(h/phi)^nu K_nu(h/phi) / (2^(nu-1) Gamma(nu))``.

    Accepts scalars or arrays; equals 1 at ``h = 0``. Evaluated on the log
    scale with the exponentially scaled Bessel function so that large lags
    underflow cleanly to zero.
    """
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ValidationError("lag distances must be non-negative")
    nu = params.nu
    x = h / params.phi
    out = np.ones_like(x)
    pos = x > 0
    xp = x[pos]
    with np.errstate(divide="ignore"):
        logv = (
            nu * np.log(xp)
            + np.log(special.kve(nu, xp))
            - xp
            - (nu - 1) * np.log(2.0)
            - special.gammaln(nu)
        )
    out[pos] = np.minimum(np.exp(logv), 1.0)
    return out if out.ndim else float(out)


@dataclass
class LatentModel:
    """Signals, noise count, mixing matrix and mean of a simulated field."""

    signals: Sequence[MaternParams]
    noise_count: int
    mixing: np.ndarray | None = None
    mean: np.ndarray | None = None

    def __post_init__(self):
        self.signals = tuple(self.signals)
        if self.noise_count < 0 or self.p < 1:
            raise ValidationError("model needs p >= 1 channels and noise_count >= 0")
        if self.mixing is None:
            self.mixing = np.eye(self.p)
        self.mixing = np.asarray(self.mixing, dtype=float)
        if self.mixing.shape != (self.p, self.p):
            raise ValidationError(f"mixing must be {self.p}x{self.p}")
        if not np.isfinite(self.condition_number):
            raise ValidationError("mixing matrix is singular")
        if self.mean is None:
            self.mean = np.zeros(self.p)
        self.mean = np.broadcast_to(np.asarray(self.mean, dtype=float), (self.p,)).copy()

    @property
    def q(self) -> int:
        return len(self.signals)

    @property
    def p(self) -> int:
        return self.q + self.noise_count

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.mixing))

    def describe(self) -> dict:
        return {
            "signals": [{"nu": s.nu, "phi": s.phi} for s in self.signals],
            "noise_count": self.noise_count,
            "mixing": self.mixing.tolist(),
            "mean": self.mean.tolist(),
            "condition_number": self.condition_number,
        }


MODEL_SETTING_1 = (MaternParams(3, 2), MaternParams(2, 1.5), MaternParams(1, 1))
MODEL_SETTING_2 = (MaternParams(3, 2), MaternParams(2, 1.5), MaternParams(0.6, 0.6))
KERNEL_SETTING_1 = "ring:0:2"
KERNEL_SETTING_2 = "ring:0:2,ring:2:4,ring:4:6"


def random_mixing(p: int, rng: np.random.Generator, max_cond: float = 100.0) -> np.ndarray:
    """Random p x p matrix with standard normal entries and condition number <= ``max_cond``."""
    if max_cond < 1:
        raise ValidationError("max_cond must be at least 1")
    while True:
        omega = rng.standard_normal((p, p))
        if np.linalg.cond(omega) <= max_cond:
            return omega


def model_setting(which: int, noise_count: int = 2, mixing=None) -> LatentModel:
    signals = {1: MODEL_SETTING_1, 2: MODEL_SETTING_2}.get(which)
    if signals is None:
        raise ValidationError(f"unknown model setting {which}")
    return LatentModel(signals, noise_count, mixing)


def kernel_setting(which: int) -> KernelSet:
    spec = {1: KERNEL_SETTING_1, 2: KERNEL_SETTING_2}.get(which)
    if spec is None:
        raise ValidationError(f"unknown kernel setting {which}")
    return parse_kernels(spec)


def gen_coords(pattern: str, edge: int, rng: np.random.Generator) -> LocationSet:
    """Sampling locations on the square domain ``[0, edge]^2``.

    ``uniform`` draws ``edge**2`` points uniformly; ``skewed`` does the same
    but with x coordinates ``edge * Beta(2, 5)``; ``grid`` returns the
    ``(edge + 1)**2`` integer lattice points of the domain, boundaries
    included. Coincident random points are redrawn.
    """
    if pattern not in PATTERNS:
        raise ValidationError(f"pattern must be one of {PATTERNS}, got {pattern!r}")
    if int(edge) != edge or edge < 2:
        raise ValidationError(f"domain edge must be an integer >= 2, got {edge}")
    edge = int(edge)
    if pattern == "grid":
        g = np.arange(edge + 1, dtype=float)
        xx, yy = np.meshgrid(g, g, indexing="ij")
        return LocationSet(np.column_stack([xx.ravel(), yy.ravel()]))
    n = edge * edge

    def draw(k):
        x = rng.beta(2.0, 5.0, k) if pattern == "skewed" else rng.uniform(0.0, 1.0, k)
        return edge * np.column_stack([x, rng.uniform(0.0, 1.0, k)])

    coords = draw(n)
    while True:
        dup = cKDTree(coords).query_pairs(0.0, output_type="ndarray")
        if len(dup) == 0:
            break
        redo = np.unique(dup[:, 1])
        coords[redo] = draw(len(redo))
    return LocationSet(coords)


def matern_field(loc: LocationSet, params: MaternParams, rng: np.random.Generator, size: int = 1):
    """Draw ``size`` independent unit-variance Matérn fields at ``loc`` (shape (n, size))."""
    n = loc.n
    if n > MAX_DENSE_N:
        raise TooLarge(f"dense simulation supports at most {MAX_DENSE_N} locations, got {n}")
    corr = distance.squareform(matern(distance.pdist(loc.coords), params))
    np.fill_diagonal(corr, 1.0)
    chol = _cholesky(corr)
    return chol @ rng.standard_normal((n, size))


def _cholesky(corr):
    try:
        return linalg.cholesky(corr, lower=True, check_finite=False)
    except linalg.LinAlgError:
        pass
    try:
        return linalg.cholesky(corr + JITTER * np.eye(len(corr)), lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise FactorizationFailure(
            "correlation matrix is not positive definite even after diagonal jitter"
        ) from None


def sample_field(loc: LocationSet, model: LatentModel, rng: np.random.Generator) -> SpatialSample:
    """Simulate ``x = mu + Omega z`` at ``loc``.

    Signal channels come first in ``z``, followed by the noise channels.
    """
    z = latent_field(loc, model, rng)
    return SpatialSample(loc, model.mean + z @ model.mixing.T)


def latent_field(loc: LocationSet, model: LatentModel, rng: np.random.Generator) -> np.ndarray:
    n = loc.n
    if n > MAX_DENSE_N and model.q:
        raise TooLarge(f"dense simulation supports at most {MAX_DENSE_N} locations, got {n}")
    cols = [matern_field(loc, s, rng)[:, 0] for s in model.signals]
    noise = rng.standard_normal((n, model.noise_count))
    return np.column_stack(cols + [noise]) if cols else noise


@dataclass
class VariogramBin:
    lo: float
    hi: float
    h_mid: float
    gamma: float
    pair_count: int


def empirical_variogram(values, loc: LocationSet, bins) -> list[VariogramBin]:
    """Classical estimator: half the mean squared difference over pairs with lag in (lo, hi].

    ``bins`` is a sequence of ``(lo, hi)`` pairs that must not overlap.
    Empty bins are reported with ``pair_count = 0`` and ``gamma = 0``.
    """
    v = np.asarray(values, dtype=float).ravel()
    if len(v) != loc.n:
        raise ValidationError(f"expected {loc.n} values, got {len(v)}")
    bins = [(float(lo), float(hi)) for lo, hi in bins]
    for lo, hi in bins:
        if not 0 <= lo < hi:
            raise ValidationError(f"bad variogram bin ({lo}, {hi}]")
    order = sorted(bins)
    for (_, h1), (l2, _) in zip(order, order[1:]):
        if l2 < h1:
            raise ValidationError("variogram bins overlap")
    if not bins:
        return []
    hmax = max(hi for _, hi in bins)
    pairs = cKDTree(loc.coords).query_pairs(hmax, output_type="ndarray")
    i, j = pairs[:, 0], pairs[:, 1]
    lag = np.linalg.norm(loc.coords[i] - loc.coords[j], axis=1)
    sq = 0.5 * (v[i] - v[j]) ** 2
    out = []
    for lo, hi in bins:
        sel = (lag > lo) & (lag <= hi)
        count = int(sel.sum())
        gamma = float(sq[sel].mean()) if count else 0.0
        out.append(VariogramBin(lo, hi, 0.5 * (lo + hi), gamma, count))
    return out
