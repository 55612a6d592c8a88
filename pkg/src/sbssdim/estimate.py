"""Estimating the signal dimension from a sequence of tests."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .errors import ValidationError


@dataclass
class EstimateResult:
    """Estimated signal dimension with the audit trail of decisions.

    Each trace entry is ``(r, value, rejected)`` where ``value`` is a p-value
    (test based strategies) or a statistic (threshold strategy).
    """

    q_hat: int
    trace: list[tuple[int, float, bool]]
    strategy: str
    alpha: float | None = None
    thresholds: list[float] | None = field(default=None)

    def to_dict(self):
        out = {
            "q_hat": int(self.q_hat),
            "strategy": self.strategy,
            "trace": [
                {"r": int(r), "value": float(v), "rejected": bool(rej)} for r, v, rej in self.trace
            ],
        }
        if self.alpha is not None:
            out["alpha"] = float(self.alpha)
        if self.thresholds is not None:
            out["thresholds"] = [float(c) for c in self.thresholds]
        return out


def _check_alpha(alpha):
    if not 0 < alpha <= 1:
        raise ValidationError(f"alpha must be in (0, 1], got {alpha}")


def divide_conquer(
    test_fn: Callable[[int], float], p: int, alpha: float = 0.05, include_zero: bool = True
) -> EstimateResult:
    """Binary search for the smallest non-rejected signal dimension.

    Starts from ``lower = 0, upper = p`` and tests the midpoint
    ``lower + (upper - lower) // 2``; a rejection (p-value < alpha) moves
    ``lower`` up, otherwise ``upper`` comes down. The search never tests
    ``r = 0`` on its own; with ``include_zero`` that hypothesis is tested
    once the search ends at ``upper = 1`` so that an all-noise field can be
    reported as ``q_hat = 0``.
    """
    _check_alpha(alpha)
    if p < 1:
        raise ValidationError("p must be at least 1")
    lower, upper = 0, p
    trace = []
    middle = lower + (upper - lower) // 2
    while middle != lower and middle != upper:
        pv = float(test_fn(middle))
        rejected = pv < alpha
        trace.append((middle, pv, rejected))
        if rejected:
            lower = middle
        else:
            upper = middle
        middle = lower + (upper - lower) // 2
    q_hat = upper
    if include_zero and upper == 1:
        pv = float(test_fn(0))
        rejected = pv < alpha
        trace.append((0, pv, rejected))
        if not rejected:
            q_hat = 0
    return EstimateResult(q_hat, trace, "divide-conquer", alpha)


def forward_estimate(
    test_fn: Callable[[int], float], p: int, alpha: float = 0.05, include_zero: bool = True
) -> EstimateResult:
    """Test r = 0, 1, 2, ... and stop at the first non-rejection."""
    _check_alpha(alpha)
    trace = []
    for r in range(0 if include_zero else 1, p):
        pv = float(test_fn(r))
        rejected = pv < alpha
        trace.append((r, pv, rejected))
        if not rejected:
            return EstimateResult(r, trace, "forward", alpha)
    return EstimateResult(p, trace, "forward", alpha)


def chi2_thresholds(p: int, k: int, alpha: float) -> np.ndarray:
    """Per-r thresholds: the 1 - alpha chi-square quantile with k(p-r)(p-r+1)/2 df."""
    r = np.arange(p)
    df = k * (p - r) * (p - r + 1) / 2
    return stats.chi2.isf(alpha, df)


def threshold_estimate(
    stats_by_r: Sequence[float], c_n: float | Sequence[float], include_zero: bool = False
) -> EstimateResult:
    """q_hat = min{r : t_r <= c_n}, with min of the empty set equal to p.

    Parameters
    ----------
    stats_by_r : sequence of float
        Statistics ``t_0, ..., t_{p-1}`` of one fit (length p).
    c_n : float or sequence of float
        A constant threshold, or one threshold per r (length p).
    include_zero : bool
        Also consider r = 0; by default the search starts at r = 1.
    """
    t = np.asarray(stats_by_r, dtype=float)
    p = len(t)
    c = np.broadcast_to(np.asarray(c_n, dtype=float), t.shape)
    if np.any(c <= 0):
        raise ValidationError("thresholds must be positive")
    trace = []
    for r in range(0 if include_zero else 1, p):
        rejected = bool(t[r] > c[r])
        trace.append((r, float(t[r]), rejected))
        if not rejected:
            return EstimateResult(r, trace, "threshold", thresholds=list(c))
    return EstimateResult(p, trace, "threshold", thresholds=list(c))
