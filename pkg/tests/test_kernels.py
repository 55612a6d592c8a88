import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import full_grid
from sbssdim.errors import DegenerateKernel, ValidationError
from sbssdim.geometry import LocationSet
from sbssdim.kernels import (
    IDENTITY,
    Ball,
    GridLag,
    KernelSet,
    Ring,
    cross_normalization,
    normalization,
    parse_kernel,
    parse_kernels,
    supports_disjoint,
)


def brute_F(coords, k1, k2=None):
    k2 = k1 if k2 is None else k2
    n = len(coords)
    return sum(k1(coords[i] - coords[j]) * k2(coords[i] - coords[j]) for i in range(n) for j in range(n)) / n


class TestEval:
    def test_ring(self):
        assert Ring(0, 2)([1, 1]) == 1
        assert Ring(0, 2)([0, 0]) == 0
        assert Ring(0, 2)([2, 0]) == 1
        assert Ring(1, 2)([1, 0]) == 0

    def test_ball(self):
        assert Ball(1)([0, 0]) == 1 and Ball(1)([0, 1]) == 1 and Ball(1)([1, 1]) == 0
        assert not Ball(1).conforming

    def test_grid_lag(self):
        assert GridLag(2, 1)([1, -1]) == 1
        assert GridLag(2, 1)([1, 0]) == 0
        assert GridLag(1, 2)([0, -2]) == 1
        assert GridLag(1, 2)([0, 0]) == 0

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.sampled_from(
        [Ring(0, 2), Ring(1.5, 3), Ball(2), GridLag(1, 1), GridLag(2, 2)]))
    def test_symmetric(self, lag, kernel):
        lag = np.round(np.array(lag), 1)
        assert kernel(lag) == kernel(-lag)

    def test_invalid(self):
        with pytest.raises(ValidationError):
            Ring(2, 1)
        with pytest.raises(ValidationError):
            Ball(0)
        with pytest.raises(ValidationError):
            GridLag(0, 1)


class TestKernelSet:
    def test_disjoint_rings(self):
        assert supports_disjoint(Ring(0, 2), Ring(2, 4))
        assert not supports_disjoint(Ring(0, 2), Ring(1.9, 4))

    def test_grid_lags(self):
        assert supports_disjoint(GridLag(1, 1), GridLag(2, 1))
        assert not supports_disjoint(GridLag(1, 1), GridLag(1, 1))

    def test_mixed(self):
        # two-way lag 1 sits at distance sqrt(2)
        assert supports_disjoint(GridLag(2, 1), Ring(0, 1))
        assert not supports_disjoint(GridLag(2, 1), Ring(1, 1.5))
        assert not supports_disjoint(Ball(1), Ring(0.5, 2))
        assert supports_disjoint(Ball(1), Ring(1, 2))

    def test_overlap_warns(self):
        with pytest.warns(UserWarning):
            ks = KernelSet([Ring(0, 2), Ring(1, 3)])
        assert not ks.disjoint_supports

    def test_empty_and_identity(self):
        with pytest.raises(ValidationError):
            KernelSet([])
        with pytest.raises(ValidationError):
            KernelSet([IDENTITY])

    def test_parse(self):
        ks = parse_kernels("ring:0:0.5, ring:2:4,lag:1:1")
        assert ks.spec() == "ring:0:0.5,ring:2:4,lag:1:1"
        assert parse_kernel("ball:1.5") == Ball(1.5)
        assert parse_kernels(ks.spec()).spec() == ks.spec()

    @pytest.mark.parametrize("text", ["ring:0", "ring:a:2", "disc:1", "ring:3:1", "", "lag:1.5:1"])
    def test_parse_errors(self, text):
        with pytest.raises(ValidationError):
            parse_kernels(text)


class TestNormalization:
    def test_identity(self, rng):
        assert normalization(LocationSet(rng.uniform(size=(7, 2))), IDENTITY) == 1.0

    def test_two_points(self):
        assert normalization(LocationSet([[0, 0], [1, 0]]), Ring(0, 2)) == 1.0

    def test_degenerate(self):
        with pytest.raises(DegenerateKernel):
            normalization(LocationSet([[0, 0], [5, 0]]), Ring(0, 2))

    def test_brute_force(self, rng):
        coords = rng.uniform(0, 6, (40, 2))
        loc = LocationSet(coords)
        for k in [Ring(0, 2), Ring(1, 2.5), Ball(1.5)]:
            assert normalization(loc, k) == pytest.approx(brute_F(coords, k), rel=1e-12)

    def test_rigid_motion(self, rng):
        coords = rng.uniform(0, 10, (300, 2))
        a = 0.7
        rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        moved = coords @ rot.T + [3.0, -8.0]
        for k in [Ring(0, 2), Ring(2, 4)]:
            # rotation may move pairs sitting at the boundary by round-off; none exist for random points
            assert normalization(LocationSet(coords), k) == normalization(LocationSet(moved), k)


class TestCrossNormalization:
    def test_disjoint(self, rng):
        loc = LocationSet(rng.uniform(0, 5, (50, 2)))
        assert cross_normalization(loc, Ring(0, 2), Ring(2, 4)) == 0.0

    def test_same_kernel(self, rng):
        loc = LocationSet(rng.uniform(0, 5, (50, 2)))
        assert cross_normalization(loc, Ring(0, 2), Ring(0, 2)) == pytest.approx(normalization(loc, Ring(0, 2)))

    def test_collinear(self):
        coords = np.array([[0.0], [1.0], [3.0]])
        loc = LocationSet(coords)
        assert cross_normalization(loc, Ring(0, 2), Ring(0, 4)) == pytest.approx(4 / 3)
        assert cross_normalization(loc, Ring(0, 2), Ring(0, 4)) == pytest.approx(brute_F(coords, Ring(0, 2), Ring(0, 4)))

    def test_symmetric_and_brute(self, rng):
        coords = rng.uniform(0, 5, (40, 2))
        loc = LocationSet(coords)
        a, b = Ring(0, 2), Ball(2.5)
        assert cross_normalization(loc, a, b) == cross_normalization(loc, b, a)
        assert cross_normalization(loc, a, b) == pytest.approx(brute_F(coords, a, b))

    def test_grid_kernels(self):
        loc = LocationSet(full_grid(6, 6))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert cross_normalization(loc, GridLag(1, 1), Ring(0, 1)) == pytest.approx(normalization(loc, GridLag(1, 1)))
