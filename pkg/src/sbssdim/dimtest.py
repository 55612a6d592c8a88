"""Test statistic for the signal dimension and its asymptotic p-values."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import integrate, optimize, special

from .diag import SbssSolution, fit
from .errors import (
    NonConformingKernel,
    OverlappingKernelSupports,
    QuadratureFailure,
    RankOutOfRange,
)
from .kernels import KernelSet
from .scatter import SpatialSample

IMHOF_TOL = 1e-6


@dataclass
class TestResult:
    """Outcome of testing H0: the signal dimension equals ``r``.

    ``null`` describes the reference distribution, one of
    ``{"type": "chisq", "df": ...}``,
    ``{"type": "weighted_chisq", "weights": [...], "df_each": ...}`` or
    ``{"type": "bootstrap", "B": ..., "count_geq": ...}``.
    """

    __test__ = False

    r: int
    statistic: float
    null: dict[str, Any]
    p_value: float
    method: str
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        out = {
            "method": self.method,
            "r": int(self.r),
            "statistic": float(self.statistic),
            "null": self.null,
            "p_value": float(self.p_value),
        }
        out.update(self.extra)
        return out


def statistics(sol: SbssSolution, n: int | None = None) -> np.ndarray:
    """All statistics ``t_0, ..., t_{p-1}`` of one fit.

    ``t_r = n/2 * sum_l ||D_l[r:, r:]||_F^2``. The values are accumulated from
    the smallest trailing block outwards by adding non-negative terms, so
    ``t_r >= t_{r+1}`` holds exactly in floating point.
    """
    n = sol.n if n is None else n
    d = sol.d_matrices
    p = d.shape[1]
    sq = d * d
    out = np.empty(p)
    running = 0.0
    for r in range(p - 1, -1, -1):
        border = sq[:, r, r].sum() + sq[:, r, r + 1 :].sum() + sq[:, r + 1 :, r].sum()
        running = running + 0.5 * n * float(border)
        out[r] = running
    return out


def statistic(sol: SbssSolution, r: int, n: int | None = None) -> float:
    p = sol.d_matrices.shape[1]
    if not 0 <= r <= p - 1:
        raise RankOutOfRange(f"r must be in [0, {p - 1}], got {r}")
    return float(statistics(sol, n)[r])


def chi2_df(p: int, r: int, k: int = 1) -> int:
    return k * (p - r) * (p - r + 1) // 2


def chi2_sf(t: float, df: float) -> float:
    """Upper tail of the chi-square distribution (regularised incomplete gamma)."""
    if t <= 0:
        return 1.0
    return float(special.gammaincc(df / 2.0, t / 2.0))


def asymptotic_pvalue(t: float, p: int, r: int, k: int = 1) -> float:
    return chi2_sf(t, chi2_df(p, r, k))


def _imhof(t, lam, h, tol):
    """P(sum_j lam_j * chi2_{h_j} > t) by Imhof's inversion formula.

    The integrand is sin(a(u) - w u) / (u rho(u)) with a(u) bounded and
    w = t/2. Beyond ten periods of w u the sine is expanded, leaving two
    Fourier integrals that QUADPACK's QAWF routine handles without
    truncation.
    """
    omega = 0.5 * t

    def a(u):
        return 0.5 * np.sum(h * np.arctan(lam * u))

    def rho(u):
        return np.exp(0.25 * np.sum(h * np.log1p((lam * u) ** 2)))

    def full(u):
        if u == 0.0:
            return 0.5 * np.sum(h * lam) - omega
        return math.sin(a(u) - omega * u) / (u * rho(u))

    # [0, u1]: plain quadrature; [u1, u2]: slowly decaying, at most ten
    # cycles of omega * u, integrated in log u; [u2, inf): Fourier integrals
    u1 = max(1.0 / lam.max(), 1.0)
    u2 = 20.0 * math.pi / omega
    opts = dict(epsabs=tol / 10, epsrel=0, limit=500)
    head, err_head = integrate.quad(full, 0.0, min(u1, u2), **opts)
    if u2 > u1:
        mid, err_mid = integrate.quad(
            lambda v: math.exp(v) * full(math.exp(v)), math.log(u1), math.log(u2), **opts
        )
        head += mid
        err_head += err_mid
    tail_cos, err_cos = integrate.quad(
        lambda u: math.sin(a(u)) / (u * rho(u)), u2, np.inf, weight="cos", wvar=omega,
        epsabs=tol / 10, limlst=200,
    )
    tail_sin, err_sin = integrate.quad(
        lambda u: math.cos(a(u)) / (u * rho(u)), u2, np.inf, weight="sin", wvar=omega,
        epsabs=tol / 10, limlst=200,
    )
    value = 0.5 + (head + tail_cos - tail_sin) / math.pi
    err = (err_head + err_cos + err_sin) / math.pi
    return value, err


def chernoff_bound(t, lam, h, lower=False) -> float:
    """Chernoff bound on P(Q > t), or on P(Q < t) with ``lower``, for Q = sum_j lam_j chi2_{h_j}."""
    if lower:
        s_hi = 1e6 / max(t, 1e-300)

        def log_bound(s):
            return s * t - 0.5 * np.sum(h * np.log1p(2.0 * s * lam))

    else:
        s_hi = 0.5 / lam.max() * (1 - 1e-9)

        def log_bound(s):
            return -s * t - 0.5 * np.sum(h * np.log1p(-2.0 * s * lam))

    res = optimize.minimize_scalar(log_bound, bounds=(0.0, s_hi), method="bounded")
    return float(math.exp(min(res.fun, 0.0)))


def moment_matched_sf(t: float, weights, df_each) -> float:
    """Three-moment (Pearson) chi-square approximation of the weighted tail."""
    lam = np.asarray(weights, dtype=float)
    h = np.broadcast_to(np.asarray(df_each, dtype=float), lam.shape)
    c1 = float(np.sum(h * lam))
    c2 = float(np.sum(h * lam**2))
    c3 = float(np.sum(h * lam**3))
    dof = c2**3 / c3**2
    x = (t - c1) * math.sqrt(dof / c2) + dof
    return chi2_sf(x, dof)


def weighted_chi2_pvalue(t: float, weights, df_each, tol: float = IMHOF_TOL, strict: bool = False) -> float:
    """Upper tail of ``sum_l w_l X_l`` with independent ``X_l ~ chi2(df_each)``.

    Evaluated by numerical inversion of the characteristic function to
    absolute accuracy ``tol``. If the quadrature error estimate exceeds
    ``tol`` the three-moment approximation is returned with a warning, or
    :class:`QuadratureFailure` is raised when ``strict``.
    """
    lam = np.asarray(weights, dtype=float).ravel()
    if lam.size == 0 or np.any(lam <= 0):
        raise ValueError("weights must be positive")
    h = np.broadcast_to(np.asarray(df_each, dtype=float), lam.shape).astype(float)
    if t <= 0:
        return 1.0
    # far tails: a bound already within tolerance of 0 or 1
    bound = chernoff_bound(float(t), lam, h)
    if bound <= tol:
        return bound
    bound = chernoff_bound(float(t), lam, h, lower=True)
    if bound <= tol:
        return 1.0 - bound
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        value, err = _imhof(float(t), lam, h, tol)
    if not (err <= tol and -tol <= value <= 1 + tol):
        if strict:
            raise QuadratureFailure(f"weighted chi-square tail not resolved (error {err:.2g})")
        warnings.warn("Imhof quadrature failed; using three-moment approximation", stacklevel=2)
        return moment_matched_sf(t, lam, h)
    return min(max(value, 0.0), 1.0)


def check_kernels(kernels: KernelSet, allow_ball: bool = False):
    """Reject kernel sets the asymptotic null distribution does not cover."""
    if not kernels.conforming and not allow_ball:
        raise NonConformingKernel(
            f"kernels {kernels.spec()} include f(0) != 0; pass allow_ball to use them anyway"
        )
    if not kernels.disjoint_supports:
        raise OverlappingKernelSupports(
            f"kernels {kernels.spec()} have overlapping supports; use a bootstrap test instead"
        )


def asymptotic_test(
    sample: SpatialSample,
    kernels: KernelSet,
    r: int,
    centered: bool = True,
    unnormalized: bool = False,
    allow_ball: bool = False,
    solution: SbssSolution | None = None,
) -> TestResult:
    """Asymptotic test of H0r: exactly p - r white-noise components.

    The default renormalised statistic is referred to a chi-square law with
    k (p-r)(p-r+1)/2 degrees of freedom. With ``unnormalized`` the local
    covariances are divided by n only and the null law is the weighted sum
    of k chi-squares with weights F_{n,f_l}.
    """
    if not isinstance(kernels, KernelSet):
        kernels = KernelSet(kernels)
    check_kernels(kernels, allow_ball)
    if solution is None:
        solution = fit(sample, kernels, centered=centered, normalized=not unnormalized)
    return test_from_solution(solution, r)


def test_from_solution(sol: SbssSolution, r: int) -> TestResult:
    """Asymptotic p-value of H0r for an existing fit."""
    p, k = sol.p, sol.k
    t = statistic(sol, r)
    if sol.normalized:
        df = chi2_df(p, r, k)
        return TestResult(r, t, {"type": "chisq", "df": df}, chi2_sf(t, df), "asym")
    df_each = chi2_df(p, r, 1)
    weights = [float(w) for w in sol.normalizations]
    pv = weighted_chi2_pvalue(t, weights, df_each)
    null = {"type": "weighted_chisq", "weights": weights, "df_each": df_each}
    return TestResult(r, t, null, pv, "asym-unnormalized")


test_from_solution.__test__ = False
