"""Whitening and orthogonal approximate joint diagonalisation.

The unmixing matrix is ``gamma = U.T @ W`` where ``W`` is the symmetric
inverse square root of the covariance matrix and ``U`` is the orthogonal
matrix maximising the summed squared diagonals of the whitened local
covariance matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoConvergence, SingularScatter, ValidationError
from .kernels import KernelSet
from .scatter import KernelWeights, ScatterMatrix, SpatialSample

EIGEN_FLOOR = 1e-12
ANGLE_TOL = 1e-12
MAX_SWEEPS = 200


def whiten(s0) -> np.ndarray:
    """Symmetric inverse square root ``s0^{-1/2}`` of a covariance matrix.

    Raises
    ------
    SingularScatter
        If the smallest eigenvalue is below ``1e-12`` times the largest,
        which happens when data channels are (nearly) collinear.
    """
    m = s0.m if isinstance(s0, ScatterMatrix) else np.asarray(s0, dtype=float)
    vals, vecs = np.linalg.eigh((m + m.T) / 2)
    if vals[-1] <= 0 or vals[0] <= EIGEN_FLOOR * vals[-1]:
        raise SingularScatter(
            f"covariance matrix is singular (eigenvalue {vals[0]:.3g}); data channels are collinear",
            eigenvalue=float(vals[0]),
        )
    w = (vecs / np.sqrt(vals)) @ vecs.T
    return (w + w.T) / 2


def diagonality(mats, u=None) -> float:
    """Sum over matrices of squared diagonal entries of ``u.T @ M @ u``."""
    mats = np.asarray(mats, dtype=float)
    if u is not None:
        mats = u.T @ mats @ u
    return float((np.diagonal(mats, axis1=1, axis2=2) ** 2).sum())


def joint_diagonalize(mats, tol=ANGLE_TOL, max_sweeps=MAX_SWEEPS, history=None) -> np.ndarray:
    """Orthogonal approximate joint diagonaliser of symmetric matrices.

    Cyclic Jacobi sweeps; each plane rotation uses the closed-form angle
    that maximises the diagonal criterion of all matrices at once
    (Cardoso & Souloumiac, 1996).

    Parameters
    ----------
    mats : array_like, shape (k, p, p)
        Symmetric matrices.
    tol : float
        Stop once every rotation angle in a sweep is below ``tol``.
    max_sweeps : int
        Raise :class:`NoConvergence` after this many sweeps.
    history : list, optional
        If given, the criterion value after each sweep is appended.

    Returns
    -------
    U : ndarray, shape (p, p)
        Orthogonal; ``U.T @ M @ U`` is approximately diagonal for all M.
    """
    a = np.array(mats, dtype=float)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise ValidationError("expected a stack of square matrices")
    k, p, _ = a.shape
    a = (a + a.transpose(0, 2, 1)) / 2
    u = np.eye(p)
    if history is not None:
        history.append(diagonality(a))
    for _sweep in range(max_sweeps):
        largest = 0.0
        for i in range(p - 1):
            for j in range(i + 1, p):
                g1 = a[:, i, i] - a[:, j, j]
                g2 = a[:, i, j] + a[:, j, i]
                ton = g1 @ g1 - g2 @ g2
                toff = 2.0 * (g1 @ g2)
                # quarter angle of the principal direction; also right when toff = 0 and ton < 0
                theta = 0.25 * np.arctan2(toff, ton)
                if abs(theta) <= tol:
                    continue
                largest = max(largest, abs(theta))
                c, s = np.cos(theta), np.sin(theta)
                ai = a[:, :, i].copy()
                a[:, :, i] = c * ai + s * a[:, :, j]
                a[:, :, j] = c * a[:, :, j] - s * ai
                ai = a[:, i, :].copy()
                a[:, i, :] = c * ai + s * a[:, j, :]
                a[:, j, :] = c * a[:, j, :] - s * ai
                ui = u[:, i].copy()
                u[:, i] = c * ui + s * u[:, j]
                u[:, j] = c * u[:, j] - s * ui
        if history is not None:
            history.append(diagonality(a))
        if largest <= tol:
            return u
    raise NoConvergence(
        f"joint diagonalisation did not converge in {max_sweeps} sweeps "
        f"(last rotation angle {largest:.3g})",
        rotation=largest,
    )


@dataclass(frozen=True, eq=False)
class SbssSolution:
    """Result of fitting the unmixing matrix to one sample."""

    gamma: np.ndarray
    whitener: np.ndarray
    d_matrices: np.ndarray
    pseudo_eigenvalues: np.ndarray
    latent: np.ndarray
    n: int
    kernels: KernelSet
    mean: np.ndarray
    normalizations: np.ndarray
    normalized: bool = True
    centered: bool = True
    scatters: np.ndarray = field(repr=False, default=None)

    @property
    def p(self) -> int:
        return self.gamma.shape[0]

    @property
    def k(self) -> int:
        return self.d_matrices.shape[0]

    @property
    def mixing(self) -> np.ndarray:
        """Estimated mixing matrix, the inverse of ``gamma``."""
        return np.linalg.inv(self.gamma)


def kernel_weights(sample_or_loc, kernels: KernelSet) -> list[KernelWeights]:
    loc = getattr(sample_or_loc, "loc", sample_or_loc)
    return [KernelWeights(loc, k) for k in kernels]


def fit(
    sample: SpatialSample,
    kernels: KernelSet,
    centered: bool = True,
    normalized: bool = True,
    weights: list[KernelWeights] | None = None,
) -> SbssSolution:
    """Estimate the unmixing matrix from the covariance and k local covariances.

    Rows of ``gamma`` are ordered by descending pseudo-eigenvalue
    (sum over kernels of squared diagonal entries of ``D_l``), ties kept in
    their pre-sort order, and each row's largest-magnitude entry is made
    positive.

    Parameters
    ----------
    weights : list of KernelWeights, optional
        Precomputed kernel weights for ``sample.loc``; built when omitted.
    """
    if not isinstance(kernels, KernelSet):
        kernels = KernelSet(kernels)
    if weights is None:
        weights = kernel_weights(sample, kernels)
    x = sample.values
    mean = x.mean(axis=0)
    xc = x - mean if centered else x
    s0 = xc.T @ xc / sample.n
    w = whiten((s0 + s0.T) / 2)
    scatters = np.array([kw.local_covariance(xc, normalized) for kw in weights])
    u = joint_diagonalize(w @ scatters @ w)
    gamma = u.T @ w
    d = gamma @ scatters @ gamma.T
    pseudo = (np.diagonal(d, axis1=1, axis2=2) ** 2).sum(axis=0)
    order = np.argsort(-pseudo, kind="stable")
    gamma = gamma[order]
    rows = np.arange(gamma.shape[0])
    signs = np.sign(gamma[rows, np.argmax(np.abs(gamma), axis=1)])
    signs[signs == 0] = 1.0
    gamma = gamma * signs[:, None]
    d = gamma @ scatters @ gamma.T
    d = (d + d.transpose(0, 2, 1)) / 2
    return SbssSolution(
        gamma=gamma,
        whitener=w,
        d_matrices=d,
        pseudo_eigenvalues=pseudo[order],
        latent=(x - mean) @ gamma.T,
        n=sample.n,
        kernels=kernels,
        mean=mean,
        normalizations=np.array([kw.normalization for kw in weights]),
        normalized=normalized,
        centered=centered,
        scatters=scatters,
    )
