"""Deterministic numerical kernels used by every protocol step.

All kernels work on 64-bit float matrices (plain ``numpy.ndarray``), are pure
functions of their inputs, and are safe to call concurrently. Randomized
kernels take an :class:`~feddcl.rng.RngStream` (or a live generator) so that a
seed fully determines the output.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError, ParameterError
from .rng import RngStream


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array and validate finiteness."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ParameterError(f"{name} must be 2-dimensional, got ndim={arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ParameterError(f"{name} must be non-empty, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise DataError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class SvdFactors:
    """Rank-k factors ``u @ diag(sigma) @ v.T`` of a truncated SVD.

    ``u`` is n-by-k and ``v`` is p-by-k, both with orthonormal columns;
    ``sigma`` holds the k leading singular values, non-increasing.
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray
    rank_requested: int

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T


@dataclass(frozen=True)
class LstsqSolution:
    """Minimum-norm least-squares solution with its residual and rank report."""

    g: np.ndarray
    residual: float
    rank: int
    rank_deficient: bool


def truncated_svd(m, k: int, role: str = "matrix") -> SvdFactors:
    """Best rank-``k`` factorization of ``m`` in the Frobenius norm.

    Args:
        m: n-by-p matrix, finite entries.
        k: target rank, 1 <= k <= min(n, p).
        role: name used in error messages so failures identify the matrix.
    """
    arr = as_matrix(m, role)
    limit = min(arr.shape)
    if not 1 <= k <= limit:
        raise ParameterError(
            f"rank k={k} out of range [1, {limit}] for {role} of shape {arr.shape}"
        )
    try:
        u, s, vt = np.linalg.svd(arr, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD did not converge for {role} of shape {arr.shape}") from exc
    return SvdFactors(
        u=np.ascontiguousarray(u[:, :k]),
        sigma=s[:k].copy(),
        v=np.ascontiguousarray(vt[:k].T),
        rank_requested=k,
    )


def singular_values(m, role: str = "matrix") -> np.ndarray:
    """All singular values of ``m``, non-increasing."""
    arr = as_matrix(m, role)
    try:
        return np.linalg.svd(arr, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD did not converge for {role} of shape {arr.shape}") from exc


def lstsq_multi(a, b) -> LstsqSolution:
    """Minimum-Frobenius-norm solution of ``min_G ||a @ G - b||_F``.

    Rank deficiency of ``a`` is not an error: the pseudoinverse (minimum norm)
    solution is returned and flagged via ``rank_deficient``.
    """
    a_arr = as_matrix(a, "lstsq lhs")
    b_arr = as_matrix(b, "lstsq rhs")
    if a_arr.shape[0] != b_arr.shape[0]:
        raise ParameterError(
            f"lstsq shapes do not conform: lhs has {a_arr.shape[0]} rows, "
            f"rhs has {b_arr.shape[0]}"
        )
    g, _, rank, _ = np.linalg.lstsq(a_arr, b_arr, rcond=None)
    residual = float(np.linalg.norm(a_arr @ g - b_arr))
    rank = int(rank)
    return LstsqSolution(g=g, residual=residual, rank=rank, rank_deficient=rank < a_arr.shape[1])


def random_orthogonal(k: int, rng: RngStream | np.random.Generator) -> np.ndarray:
    """Haar-uniform k-by-k orthogonal matrix.

    A standard-Gaussian draw is orthonormalized by QR; the sign convention
    (positive diagonal of the triangular factor) makes seeds portable.
    """
    if k < 1:
        raise ParameterError(f"orthogonal matrix size must be >= 1, got {k}")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    g = gen.standard_normal((k, k))
    q, r = np.linalg.qr(g)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d


def pca_basis(x, k: int, center: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Top-``k`` principal directions of ``x``.

    Returns ``(mean, w)`` where ``w`` (m-by-k, orthonormal columns) holds the
    leading right singular vectors of the centered data. When the data has
    fewer than ``k`` directions of variance the remaining columns are an
    arbitrary orthonormal completion and a ``RuntimeWarning`` is issued.
    """
    arr = as_matrix(x, "pca data")
    n, m = arr.shape
    if not 1 <= k <= min(n, m):
        raise ParameterError(f"pca rank k={k} out of range [1, {min(n, m)}] for shape {arr.shape}")
    if center and n < 2:
        raise ParameterError("centered pca requires at least 2 rows")
    mean = arr.mean(axis=0) if center else np.zeros(m)
    try:
        _, s, vt = np.linalg.svd(arr - mean, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD did not converge for pca data of shape {arr.shape}") from exc
    tol = max(n, m) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    if s[k - 1] <= tol:
        warnings.warn(
            f"pca data has fewer than k={k} directions of variance; "
            "trailing basis columns are an arbitrary orthonormal completion",
            RuntimeWarning,
            stacklevel=2,
        )
    return mean, np.ascontiguousarray(vt[:k].T)


def principal_angles(a, b) -> np.ndarray:
    """Principal angles (radians, ascending) between two equal-dimension column spaces.

    Uses the cosine-based formula for large angles and the sine-based one for
    small angles, which stays accurate down to machine precision.
    """
    a_arr = as_matrix(a, "subspace basis a")
    b_arr = as_matrix(b, "subspace basis b")
    if a_arr.shape[0] != b_arr.shape[0]:
        raise ParameterError("subspace bases must share their ambient dimension")
    if a_arr.shape[1] != b_arr.shape[1]:
        raise ParameterError(
            f"subspaces must have equal dimension, got {a_arr.shape[1]} and {b_arr.shape[1]}"
        )
    qa, _ = np.linalg.qr(a_arr)
    qb, _ = np.linalg.qr(b_arr)
    c = qa.T @ qb
    cos_vals = np.linalg.svd(c, compute_uv=False)  # descending, angles ascending
    sin_vals = np.linalg.svd(qb - qa @ c, compute_uv=False)[::-1]  # ascending to match
    angles = np.where(
        cos_vals**2 >= 0.5,
        np.arcsin(np.clip(sin_vals, -1.0, 1.0)),
        np.arccos(np.clip(cos_vals, -1.0, 1.0)),
    )
    return np.sort(angles)
