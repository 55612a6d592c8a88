from collections import Counter

import numpy as np
import pytest

from conftest import full_grid
from sbssdim import bootstrap as bs
from sbssdim.bootstrap import (
    BootstrapSpec,
    block_partition,
    bootstrap_test,
    regular_partition,
    resample_noise,
    spatial_resample_irregular,
    spatial_resample_regular,
)
from sbssdim.errors import (
    EmptyResample,
    NoDonorBlocks,
    NotRegular,
    ReplicateFailure,
    SingularScatter,
    ValidationError,
)
from sbssdim.geometry import LocationSet
from sbssdim.kernels import KernelSet, Ring
from sbssdim.scatter import SpatialSample
from sbssdim.simulate import gen_coords, model_setting, sample_field


class FixedPicks:
    """Stand-in generator returning preset donor indices."""

    def __init__(self, picks):
        self.picks = np.asarray(picks)

    def integers(self, low, high, size=None):
        return self.picks[:size]


class TestResampleNoise:
    def test_full_rank_unchanged(self, rng):
        z = rng.standard_normal((20, 3))
        np.testing.assert_array_equal(resample_noise(z, 3, "parametric", rng), z)

    def test_parametric_moments(self, rng):
        z = np.full((10_000, 3), 7.0)
        out = resample_noise(z, 0, "parametric", rng)
        assert np.abs(out.mean(0)).max() < 0.05 and np.abs(out.var(0) - 1).max() < 0.05

    def test_signal_columns_kept(self, rng):
        z = rng.standard_normal((50, 4))
        for mode in ("parametric", "permute"):
            np.testing.assert_array_equal(resample_noise(z, 2, mode, rng)[:, :2], z[:, :2])

    def test_permute_support(self, rng):
        z = rng.standard_normal((100, 4))
        out = resample_noise(z, 1, "permute", rng)
        assert set(out[:, 1:].ravel()) <= set(z[:, 1:].ravel())
        single = resample_noise(z, 3, "permute", rng)[:, 3]
        assert set(single) <= set(z[:, 3])

    def test_bad_args(self, rng):
        with pytest.raises(ValidationError):
            resample_noise(np.zeros((5, 2)), 0, "wild", rng)
        with pytest.raises(ValidationError):
            resample_noise(np.zeros((5, 2)), 3, "permute", rng)


class TestBlockPartition:
    def test_enumeration(self, rng):
        loc = LocationSet(rng.uniform(0, 30, (300, 2)))
        part = block_partition(loc, 10, bounds=([0, 0], [30, 30]))
        assert part.n_tiles == 9
        expected = {(i, j) for i in range(21) for j in range(21)}
        assert {tuple(a) for a in part.donors.astype(int)} == expected
        assert np.all(part.donors + 10 <= 30)

    def test_tiles_partition_points(self, rng):
        coords = rng.uniform(0, 23, (400, 2))
        part = block_partition(LocationSet(coords), 7)
        counts = Counter(np.concatenate(part.members).tolist())
        assert sorted(counts) == list(range(400)) and set(counts.values()) == {1}
        for tl, th, mem in zip(part.tile_lo, part.tile_hi, part.members):
            assert np.all(coords[mem] >= tl - 1e-12) and np.all(coords[mem] <= th + 1e-12)

    def test_too_large(self, rng):
        loc = LocationSet(rng.uniform(0, 5, (30, 2)))
        with pytest.raises(NoDonorBlocks):
            block_partition(loc, 10)

    def test_single_tile(self, rng):
        loc = LocationSet(rng.uniform(0, 5, (30, 2)))
        part = block_partition(loc, 5, bounds=([0, 0], [5, 5]))
        assert part.n_tiles == 1 and part.n_donors == 1


class TestIrregularResample:
    def test_single_tile_identity(self, rng):
        coords = rng.uniform(0, 5, (30, 2))
        z = rng.standard_normal((30, 2))
        part = block_partition(LocationSet(coords), 5, bounds=([0, 0], [5, 5]))
        c2, z2 = spatial_resample_irregular(coords, z, part, rng)
        order = np.lexsort(coords.T)
        order2 = np.lexsort(c2.T)
        np.testing.assert_allclose(c2[order2], coords[order])
        np.testing.assert_array_equal(z2[order2], z[order])

    def test_self_donors_identity(self, rng):
        coords = rng.uniform(0, 1, (40, 2)) * [20, 10]
        z = rng.standard_normal((40, 3))
        part = block_partition(LocationSet(coords), 10, bounds=([0, 0], [20, 10]))
        assert part.n_tiles == 2
        own = [int(np.flatnonzero((part.donors == tl).all(axis=1))[0]) for tl in part.tile_lo]
        c2, z2 = spatial_resample_irregular(coords, z, part, FixedPicks(own))
        np.testing.assert_allclose(c2[np.lexsort(c2.T)], coords[np.lexsort(coords.T)])

    def test_expected_count(self):
        rng = np.random.default_rng(2)
        loc = gen_coords("uniform", 30, rng)
        part = block_partition(loc, 10, bounds=([0, 0], [30, 30]))
        z = np.zeros((loc.n, 1))
        counts = [len(spatial_resample_irregular(loc.coords, z, part, rng)[0]) for _ in range(200)]
        assert np.mean(counts) == pytest.approx(loc.n, rel=0.1)

    def test_inside_region(self, rng):
        loc = gen_coords("skewed", 25, rng)
        part = block_partition(loc, 8)
        for _ in range(20):
            c2, _ = spatial_resample_irregular(loc.coords, np.zeros((loc.n, 1)), part, rng)
            assert np.all(c2 >= part.lo) and np.all(c2 <= part.hi)
            assert len(np.unique(c2, axis=0)) == len(c2)

    def test_empty(self):
        coords = np.array([[0.0, 0.0], [10.0, 10.0], [1.0, 9.0]])
        part = block_partition(LocationSet(coords), 2, bounds=([0, 0], [10, 10]))
        # donor anchored in the empty middle for every tile
        mid = int(np.flatnonzero((part.donors == [4, 4]).all(axis=1))[0])
        with pytest.raises(EmptyResample):
            spatial_resample_irregular(coords, np.zeros((3, 1)), part, FixedPicks([mid] * part.n_tiles))


class TestRegularResample:
    def test_enumeration(self):
        part = regular_partition(LocationSet(full_grid(4, 4)), 2)
        assert part.n_tiles == 4 and part.n_donors == 9

    def test_donor_blocks_copied(self, rng):
        coords = full_grid(7, 5)
        loc = LocationSet(coords)
        part = regular_partition(loc, 3)
        z = rng.standard_normal((loc.n, 2))
        out = spatial_resample_regular(z, part, rng)
        assert out.shape == z.shape
        # oracle: each tile holds the values of some donor block, in the same relative order
        pos = {tuple(c): i for i, c in enumerate(coords.astype(int))}
        for tl, th, mem in zip(part.tile_lo.astype(int), part.tile_hi.astype(int), part.members):
            size = th - tl
            ok = False
            for a in part.donors.astype(int):
                src = [pos[(a[0] + dx, a[1] + dy)] for dx in range(size[0]) for dy in range(size[1])]
                dst = [pos[(tl[0] + dx, tl[1] + dy)] for dx in range(size[0]) for dy in range(size[1])]
                ok |= np.array_equal(out[dst], z[src])
            assert ok

    def test_whole_grid(self, rng):
        loc = LocationSet(full_grid(3, 3))
        part = regular_partition(loc, 3)
        z = rng.standard_normal((9, 2))
        np.testing.assert_array_equal(spatial_resample_regular(z, part, rng), z)

    def test_requires_grid(self, rng):
        with pytest.raises(NotRegular):
            regular_partition(LocationSet(rng.uniform(size=(20, 2))), 2)
        with pytest.raises(NotRegular):
            regular_partition(LocationSet(full_grid(4, 4)[1:]), 2)


@pytest.fixture(scope="module")
def model_sample():
    rng = np.random.default_rng(12)
    loc = gen_coords("uniform", 20, rng)
    return sample_field(loc, model_setting(1), rng)


KS = KernelSet([Ring(0, 2)])


class TestBootstrapTest:
    def test_pvalue_formula(self, model_sample):
        res, reps = bootstrap_test(model_sample, KS, 3, BootstrapSpec(B=40, seed=1), return_replicates=True)
        assert res.null["count_geq"] == int(np.sum(reps >= res.statistic))
        assert res.p_value == (res.null["count_geq"] + 1) / 41
        assert res.to_dict()["B"] == 40 and res.method == "param"

    def test_strong_signal_minimum(self, model_sample):
        res = bootstrap_test(model_sample, KS, 0, BootstrapSpec(B=200, seed=3))
        assert res.null["count_geq"] == 0 and res.p_value == 1 / 201

    @pytest.mark.parametrize("spec", [
        BootstrapSpec(B=15, noise_mode="permute", seed=4),
        BootstrapSpec(B=15, spatial="irregular", seed=4),
        BootstrapSpec(B=15, noise_mode="permute", spatial="irregular", m=7, seed=4),
    ])
    def test_reproducible_across_workers(self, model_sample, spec):
        a = bootstrap_test(model_sample, KS, 3, spec, return_replicates=True)[1]
        b = bootstrap_test(model_sample, KS, 3, spec, return_replicates=True)[1]
        parallel = BootstrapSpec(spec.B, spec.noise_mode, spec.spatial, spec.m, spec.seed, workers=3)
        c = bootstrap_test(model_sample, KS, 3, parallel, return_replicates=True)[1]
        assert a.tobytes() == b.tobytes() == c.tobytes()

    def test_regular(self):
        rng = np.random.default_rng(5)
        loc = gen_coords("grid", 15, rng)
        sample = sample_field(loc, model_setting(1), rng)
        res = bootstrap_test(sample, KS, 3, BootstrapSpec(B=20, spatial="regular", seed=1))
        assert res.extra["m"] == 4.0 and 1 / 21 <= res.p_value <= 1
        with pytest.raises(NotRegular):
            bootstrap_test(SpatialSample(LocationSet(loc.coords[1:]), sample.values[1:]), KS, 3,
                           BootstrapSpec(B=5, spatial="regular"))

    def test_replicate_failure(self, model_sample, monkeypatch):
        real_fit = bs.fit
        calls = []

        def flaky(*args, **kwargs):
            calls.append(1)
            if len(calls) == 4:
                raise SingularScatter("collinear", eigenvalue=0.0)
            return real_fit(*args, **kwargs)

        monkeypatch.setattr(bs, "fit", flaky)
        with pytest.raises(ReplicateFailure) as info:
            bootstrap_test(model_sample, KS, 3, BootstrapSpec(B=10))
        assert info.value.index == 2 and info.value.exit_code == 1

    def test_spec_validation(self):
        with pytest.raises(ValidationError):
            BootstrapSpec(B=0)
        with pytest.raises(ValidationError):
            BootstrapSpec(spatial="regular", m=2.5)
        with pytest.raises(ValidationError):
            BootstrapSpec(noise_mode="bayes")
