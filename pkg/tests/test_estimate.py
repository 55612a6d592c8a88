import math

import numpy as np
import pytest
from scipy import stats

from sbssdim.errors import ValidationError
from sbssdim.estimate import chi2_thresholds, divide_conquer, forward_estimate, threshold_estimate


def oracle(q, log=None):
    def test(r):
        if log is not None:
            log.append(r)
        return 0.0 if r < q else 0.5

    return test


class TestDivideConquer:
    def test_trace_example(self):
        res = divide_conquer(oracle(3), 10, 0.05)
        assert [(r, rej) for r, _, rej in res.trace] == [(5, False), (2, True), (3, False)]
        assert res.q_hat == 3

    def test_nothing_rejected(self):
        res = divide_conquer(oracle(0), 10, 0.05)
        assert res.q_hat == 0
        assert res.trace[-1][0] == 0

    def test_without_zero(self):
        # without r = 0 the search cannot go below 1
        assert divide_conquer(oracle(0), 10, 0.05, include_zero=False).q_hat == 1

    def test_everything_rejected(self):
        assert divide_conquer(oracle(99), 10, 0.05).q_hat == 10

    @pytest.mark.parametrize("p", range(1, 13))
    def test_exhaustive_monotone(self, p):
        for q in range(p + 1):
            log = []
            res = divide_conquer(oracle(q, log), p, 0.05)
            assert res.q_hat == q
            assert len(log) <= math.ceil(math.log2(p)) + 1
            assert all(0 <= r <= p - 1 for r in log)
            assert forward_estimate(oracle(q), p, 0.05).q_hat == q

    def test_decisions_recorded(self):
        pv = {0: 0.001, 1: 0.04, 2: 0.2, 3: 0.01, 4: 0.9}
        res = divide_conquer(pv.__getitem__, 5, 0.05)
        for r, value, rejected in res.trace:
            assert value == pv[r] and rejected == (value < 0.05)

    def test_bad_alpha(self):
        with pytest.raises(ValidationError):
            divide_conquer(oracle(1), 5, 0.0)


class TestForward:
    def test_example(self):
        log = []
        res = forward_estimate(oracle(3, log), 10, 0.05)
        assert res.q_hat == 3 and log == [0, 1, 2, 3]

    def test_alpha_one(self):
        # with alpha = 1 only a p-value of exactly 1 is accepted
        assert forward_estimate(lambda r: 1.0, 5, 1.0).q_hat == 0
        assert forward_estimate(lambda r: 0.5, 5, 1.0).q_hat == 5


class TestThreshold:
    def test_all_above(self):
        assert threshold_estimate([50, 40, 30], 5.0).q_hat == 3

    def test_example(self):
        # t_0 is not used in the default range r = 1..p-1
        assert threshold_estimate([150, 100, 2, 1], 5.0).q_hat == 2

    def test_per_r_thresholds(self):
        c = chi2_thresholds(4, 1, 0.05)
        np.testing.assert_allclose(c, stats.chi2.isf(0.05, [10, 6, 3, 1]))
        t = [30.0, 14.0, 5.0, 0.5]
        res = threshold_estimate(t, c)
        assert res.q_hat == 2
        # equivalent to forward testing with chi-square p-values
        fwd = forward_estimate(lambda r: stats.chi2.sf(t[r], [10, 6, 3, 1][r]), 4, 0.05, include_zero=False)
        assert fwd.q_hat == res.q_hat

    def test_positive(self):
        with pytest.raises(ValidationError):
            threshold_estimate([3, 2, 1], 0.0)
