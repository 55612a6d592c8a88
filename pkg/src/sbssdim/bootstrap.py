"""Bootstrap tests for the signal dimension.

Under H0r the last p - r latent components are white noise. Each replicate
keeps the first r estimated components, regenerates the noise part (from
standard normals or by resampling the pooled estimated noise values),
optionally applies a spatial block bootstrap to the whole latent field, and
maps back to observation space with the fitted mixing matrix before
refitting. The p-value counts replicate statistics at least as large as the
observed one.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .diag import fit, kernel_weights
from .dimtest import TestResult, statistic
from .errors import (
    EmptyResample,
    NoDonorBlocks,
    NotRegular,
    RankOutOfRange,
    ReplicateFailure,
    SbssError,
    ValidationError,
)
from .geometry import LocationSet
from .kernels import KernelSet
from .scatter import SpatialSample

NOISE_MODES = ("parametric", "permute")
SPATIAL_MODES = (None, "irregular", "regular")
MIN_POINTS = 10
MAX_ATTEMPTS = 100
BOUNDARY_TOL = 1e-9


@dataclass(frozen=True)
class BootstrapSpec:
    """Settings of a bootstrap test.

    Parameters
    ----------
    B : int
        Number of bootstrap replicates.
    noise_mode : {"parametric", "permute"}
        How the hypothetical noise components are regenerated.
    spatial : {None, "irregular", "regular"}
        Optional spatial block bootstrap applied after the noise step.
    m : float, optional
        Block edge length. Defaults to 10 for irregular locations and
        ``ceil(n ** (1 / (2 d)))`` lattice units for regular grids.
    seed : int
        Root seed; replicate ``k`` uses its own stream spawned from it.
    workers : int
        Number of processes; results do not depend on it.
    """

    B: int = 200
    noise_mode: str = "parametric"
    spatial: str | None = None
    m: float | None = None
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if int(self.B) != self.B or self.B < 1:
            raise ValidationError(f"B must be a positive integer, got {self.B}")
        if self.noise_mode not in NOISE_MODES:
            raise ValidationError(f"noise_mode must be one of {NOISE_MODES}, got {self.noise_mode!r}")
        if self.spatial not in SPATIAL_MODES:
            raise ValidationError(f"spatial must be one of {SPATIAL_MODES}, got {self.spatial!r}")
        if self.m is not None:
            if not self.m > 0:
                raise ValidationError(f"block size must be positive, got {self.m}")
            if self.spatial == "regular" and (int(self.m) != self.m or self.m < 1):
                raise ValidationError(f"regular block size must be a positive integer, got {self.m}")
        if int(self.workers) != self.workers or self.workers < 1:
            raise ValidationError(f"workers must be a positive integer, got {self.workers}")

    @property
    def method(self) -> str:
        tag = "param" if self.noise_mode == "parametric" else "perm"
        return f"sp-{tag}" if self.spatial else tag


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Independent random stream for replicate ``index`` under root ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def resample_noise(latent, r: int, mode: str, rng: np.random.Generator) -> np.ndarray:
    """Keep the first ``r`` latent columns and regenerate the others.

    ``parametric`` draws iid standard normals; ``permute`` draws iid with
    replacement from the pooled n (p - r) estimated noise values.
    """
    z = np.array(latent, dtype=float)
    n, p = z.shape
    if not 0 <= r <= p:
        raise RankOutOfRange(f"r must be in [0, {p}], got {r}")
    if mode not in NOISE_MODES:
        raise ValidationError(f"noise mode must be one of {NOISE_MODES}, got {mode!r}")
    if r == p:
        return z
    if mode == "parametric":
        z[:, r:] = rng.standard_normal((n, p - r))
    else:
        pool = z[:, r:].ravel()
        z[:, r:] = pool[rng.integers(0, pool.size, size=(n, p - r))]
    return z


@dataclass
class BlockPartition:
    """Tiles covering the sample region and the donor blocks that replace them.

    For irregular locations boxes are in coordinate units; for regular grids
    they are in lattice index units. Tile ``i`` spans
    ``[tile_lo[i], tile_hi[i])`` (closed at the region's upper boundary);
    each donor is anchored at a row of ``donors`` and has edge ``m``.
    """

    m: float
    lo: np.ndarray
    hi: np.ndarray
    tile_lo: np.ndarray
    tile_hi: np.ndarray
    donors: np.ndarray
    members: list = field(repr=False)
    regular: bool = False
    lookup: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_tiles(self) -> int:
        return len(self.tile_lo)

    @property
    def n_donors(self) -> int:
        return len(self.donors)


def _tile_layout(lo, hi, m):
    extent = hi - lo
    counts = np.maximum(np.ceil(extent / m - BOUNDARY_TOL).astype(int), 1)
    starts = np.array(list(product(*[range(c) for c in counts])), dtype=float).reshape(-1, len(lo))
    tile_lo = lo + starts * m
    tile_hi = np.minimum(tile_lo + m, hi)
    return counts, tile_lo, tile_hi


def block_partition(
    loc: LocationSet, m: float, donor_step: float = 1.0, bounds=None
) -> BlockPartition:
    """Tiles of edge ``m`` over the bounding box and the interior donor blocks.

    Tiles are anchored at the lower corner of the region and trimmed at its
    upper boundary. Donor blocks are anchored at ``lo + k * donor_step``
    along each axis and must fit entirely inside the region.

    Parameters
    ----------
    loc : LocationSet
    m : float
        Block edge length.
    donor_step : float
        Spacing of donor anchors.
    bounds : (array_like, array_like), optional
        Lower and upper corners of the region; defaults to the bounding box
        of the locations.
    """
    if not m > 0:
        raise ValidationError(f"block size must be positive, got {m}")
    if not donor_step > 0:
        raise ValidationError(f"donor step must be positive, got {donor_step}")
    coords = loc.coords
    if bounds is None:
        lo, hi = coords.min(axis=0), coords.max(axis=0)
    else:
        lo = np.asarray(bounds[0], dtype=float).reshape(loc.d)
        hi = np.asarray(bounds[1], dtype=float).reshape(loc.d)
        if np.any(coords < lo - BOUNDARY_TOL) or np.any(coords > hi + BOUNDARY_TOL):
            raise ValidationError("locations fall outside the given bounds")
    extent = hi - lo
    n_anchor = np.floor((extent - m) / donor_step + BOUNDARY_TOL).astype(int) + 1
    if np.any(n_anchor < 1):
        raise NoDonorBlocks(f"block size {m} exceeds the domain extent {extent.tolist()}")
    counts, tile_lo, tile_hi = _tile_layout(lo, hi, m)
    donors = lo + donor_step * np.array(
        list(product(*[range(c) for c in n_anchor])), dtype=float
    ).reshape(-1, loc.d)
    cell = np.clip(np.floor((coords - lo) / m).astype(int), 0, counts - 1)
    tile_id = np.ravel_multi_index(cell.T, counts)
    members = [np.flatnonzero(tile_id == t) for t in range(len(tile_lo))]
    return BlockPartition(float(m), lo, hi, tile_lo, tile_hi, donors, members)


def regular_partition(loc: LocationSet, m: int) -> BlockPartition:
    """Block partition of a complete regular grid in lattice index units.

    Tiles are ``m^d`` index blocks, trimmed at the far boundary; donors are
    all ``m^d`` index blocks fully inside the grid.
    """
    if int(m) != m or m < 1:
        raise ValidationError(f"regular block size must be a positive integer, got {m}")
    m = int(m)
    grid = loc.grid
    if not grid.is_regular or not grid.is_complete:
        raise NotRegular("regular spatial bootstrap needs a complete regular grid")
    shape = np.array(grid.shape)
    if np.any(shape < m):
        raise NoDonorBlocks(f"block size {m} exceeds the grid shape {shape.tolist()}")
    lo = np.zeros(loc.d)
    counts, tile_lo, tile_hi = _tile_layout(lo, shape.astype(float), m)
    donors = np.array(list(product(*[range(s - m + 1) for s in shape])), dtype=float).reshape(-1, loc.d)
    lookup = np.empty(tuple(shape), dtype=np.int64)
    lookup[tuple(grid.integer_coords.T)] = np.arange(loc.n)
    members = [
        lookup[tuple(slice(int(a), int(b)) for a, b in zip(tl, th))].ravel()
        for tl, th in zip(tile_lo, tile_hi)
    ]
    return BlockPartition(float(m), lo, shape.astype(float), tile_lo, tile_hi, donors, members, True, lookup)


def spatial_resample_irregular(coords, latent, partition: BlockPartition, rng: np.random.Generator):
    """Replace every tile by a randomly drawn donor block.

    The donor block is trimmed to the tile's shape; its points keep their
    position relative to the block corner and are moved onto the tile.

    Returns
    -------
    coords_star : ndarray, shape (n*, d)
    latent_star : ndarray, shape (n*, p)
    """
    coords = np.asarray(coords, dtype=float)
    latent = np.asarray(latent, dtype=float)
    out_c, out_z = [], []
    picks = rng.integers(0, partition.n_donors, size=partition.n_tiles)
    for tl, th, pick in zip(partition.tile_lo, partition.tile_hi, picks):
        anchor = partition.donors[pick]
        size = th - tl
        rel = coords - anchor
        # closed on the upper side where the tile touches the region boundary
        closed = th >= partition.hi - BOUNDARY_TOL
        upper_ok = np.where(closed, rel <= size + BOUNDARY_TOL, rel < size)
        sel = np.all((rel >= 0) & upper_ok, axis=1)
        out_c.append(np.minimum(tl + rel[sel], partition.hi))
        out_z.append(latent[sel])
    coords_star = np.concatenate(out_c)
    if len(coords_star) == 0:
        raise EmptyResample("no locations survived the spatial resample")
    return coords_star, np.concatenate(out_z)


def spatial_resample_regular(latent, partition: BlockPartition, rng: np.random.Generator) -> np.ndarray:
    """Replace the values on each tile by those of a random donor block.

    The location set is unchanged; the donor block is trimmed to the tile's
    shape and its values are copied in the same relative order.
    """
    if not partition.regular:
        raise ValidationError("partition was not built for a regular grid")
    latent = np.asarray(latent, dtype=float)
    out = np.empty_like(latent)
    picks = rng.integers(0, partition.n_donors, size=partition.n_tiles)
    lookup = partition.lookup
    for tl, th, pick, dst in zip(partition.tile_lo, partition.tile_hi, picks, partition.members):
        anchor = partition.donors[pick].astype(int)
        size = (th - tl).astype(int)
        src = lookup[tuple(slice(a, a + s) for a, s in zip(anchor, size))].ravel()
        out[dst] = latent[src]
    return out


def default_block_size(loc: LocationSet, spatial: str) -> float:
    if spatial == "regular":
        return float(math.ceil(loc.n ** (1.0 / (2 * loc.d))))
    return 10.0


@dataclass
class _Job:
    """Everything a worker needs to compute a range of replicate statistics."""

    coords: np.ndarray
    latent: np.ndarray
    mixing: np.ndarray
    mean: np.ndarray
    kernels: KernelSet
    r: int
    spec: BootstrapSpec
    m: float | None
    centered: bool
    normalized: bool


def _replicate_stats(job: _Job, indices) -> np.ndarray:
    spec = job.spec
    loc = LocationSet(job.coords)
    weights = None if spec.spatial == "irregular" else kernel_weights(loc, job.kernels)
    partition = None
    if spec.spatial == "irregular":
        partition = block_partition(loc, job.m)
    elif spec.spatial == "regular":
        partition = regular_partition(loc, int(job.m))
    out = np.empty(len(indices))
    for pos, k in enumerate(indices):
        rng = replicate_rng(spec.seed, k)
        try:
            z = resample_noise(job.latent, job.r, spec.noise_mode, rng)
            rloc, rweights = loc, weights
            if spec.spatial == "irregular":
                for _attempt in range(MAX_ATTEMPTS):
                    c_star, z_star = spatial_resample_irregular(job.coords, z, partition, rng)
                    if len(c_star) >= MIN_POINTS:
                        break
                else:
                    raise EmptyResample(
                        f"spatial resample kept fewer than {MIN_POINTS} points in {MAX_ATTEMPTS} attempts"
                    )
                z = z_star
                rloc = LocationSet(c_star)
                rweights = kernel_weights(rloc, job.kernels)
            elif spec.spatial == "regular":
                z = spatial_resample_regular(z, partition, rng)
            x = job.mean + z @ job.mixing.T
            sol = fit(
                SpatialSample(rloc, x),
                job.kernels,
                centered=job.centered,
                normalized=job.normalized,
                weights=rweights,
            )
            out[pos] = statistic(sol, job.r)
        except SbssError as exc:
            raise ReplicateFailure(k, exc) from exc
    return out


def _run_chunk(args):
    job, indices = args
    return _replicate_stats(job, indices)


def bootstrap_test(
    sample: SpatialSample,
    kernels: KernelSet,
    r: int,
    spec: BootstrapSpec | None = None,
    centered: bool = True,
    normalized: bool = True,
    return_replicates: bool = False,
):
    """Bootstrap test of H0r: the last p - r latent components are white noise.

    Returns a :class:`TestResult` with p-value ``(#{t_k >= t} + 1) / (B + 1)``.
    With ``return_replicates`` the replicate statistics are returned as well.
    """
    spec = BootstrapSpec() if spec is None else spec
    if not isinstance(kernels, KernelSet):
        kernels = KernelSet(kernels)
    if not 0 <= r <= sample.p - 1:
        raise RankOutOfRange(f"r must be in [0, {sample.p - 1}], got {r}")
    m = spec.m
    if spec.spatial and m is None:
        m = default_block_size(sample.loc, spec.spatial)
    if spec.spatial == "regular":
        regular_partition(sample.loc, int(m))
    elif spec.spatial == "irregular":
        block_partition(sample.loc, m)
    sol = fit(sample, kernels, centered=centered, normalized=normalized)
    t = statistic(sol, r)
    job = _Job(
        coords=np.array(sample.loc.coords),
        latent=sol.latent,
        mixing=sol.mixing,
        mean=sol.mean,
        kernels=kernels,
        r=r,
        spec=spec,
        m=m,
        centered=centered,
        normalized=normalized,
    )
    indices = np.arange(spec.B)
    workers = min(spec.workers, spec.B)
    if workers > 1:
        chunks = np.array_split(indices, workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            stats = np.concatenate(list(pool.map(_run_chunk, [(job, c) for c in chunks])))
    else:
        stats = _replicate_stats(job, indices)
    count = int(np.sum(stats >= t))
    p_value = (count + 1) / (spec.B + 1)
    extra = {
        "B": spec.B,
        "count_geq": count,
        "mode": spec.noise_mode,
        "spatial": spec.spatial,
        "m": m,
        "seed": spec.seed,
    }
    null = {"type": "bootstrap", "B": spec.B, "count_geq": count}
    result = TestResult(r, t, null, p_value, spec.method, extra)
    if return_replicates:
        return result, stats
    return result


def available_workers() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)
