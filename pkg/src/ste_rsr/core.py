"""Shared numerical types: subspaces, scatter matrices and their spectra.

Data matrices are plain ``numpy`` arrays of shape ``(D, N)`` whose columns are
the data points.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# relative eigenvalue floor used when inverting rank-deficient scatter matrices;
# keeps rounding-level residuals from being amplified once a subspace is recovered
EIG_FLOOR = 1e-15


def as_data_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"data matrix must be 2-D (D x N), got shape {X.shape}")
    if X.size == 0:
        raise ValueError("empty dataset")
    if X.shape[0] < 2:
        raise ValueError("ambient dimension D must be at least 2")
    return X


def center(raw) -> tuple[np.ndarray, np.ndarray]:
    """Subtract the column mean.

    Returns the centered ``(D, N)`` matrix and the subtracted mean vector.
    """
    X = np.asarray(raw, dtype=float)
    if X.ndim != 2 or X.size == 0:
        raise ValueError("empty dataset")
    mean = X.mean(axis=1)
    return X - mean[:, None], mean


def is_centered(X, rtol: float = 1e-9) -> bool:
    X = np.asarray(X, dtype=float)
    scale = np.max(np.linalg.norm(X, axis=0)) if X.size else 0.0
    return bool(np.linalg.norm(X.sum(axis=1)) <= rtol * max(scale, np.finfo(float).tiny) * max(1, X.shape[1]))


@dataclass(frozen=True)
class Spectrum:
    """Eigen-decomposition with eigenvalues in descending order."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.T


def _fix_signs(V: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each column made positive; argmax breaks ties by lowest index
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def sym_evd(M, atol: float = 1e-9) -> Spectrum:
    """Deterministic symmetric eigendecomposition.

    Eigenvalues are sorted in descending order and each eigenvector is signed so
    that its entry of largest absolute value is positive.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    asym = np.linalg.norm(M - M.T)
    if asym > atol * max(1.0, np.linalg.norm(M)):
        raise ValueError(f"matrix is not symmetric (||M - M^T||_F = {asym:.3e})")
    w, V = np.linalg.eigh((M + M.T) / 2)
    return Spectrum(w[::-1].copy(), _fix_signs(V[:, ::-1]))


@dataclass(frozen=True)
class Subspace:
    """A d-dimensional linear subspace of R^D given by an orthonormal basis."""

    basis: np.ndarray

    def __post_init__(self):
        U = np.asarray(self.basis, dtype=float)
        if U.ndim != 2:
            raise ValueError("basis must be a D x d matrix")
        D, d = U.shape
        if not 1 <= d <= D - 1:
            raise ValueError(f"subspace dimension must satisfy 1 <= d <= D-1, got d={d}, D={D}")
        if np.linalg.norm(U.T @ U - np.eye(d)) > 1e-10:
            raise ValueError("basis is not orthonormal; use Subspace.from_span")
        object.__setattr__(self, "basis", U)

    @classmethod
    def from_span(cls, A) -> "Subspace":
        """Orthonormalize the columns of ``A`` (assumed linearly independent)."""
        A = np.asarray(A, dtype=float)
        U, s, _ = np.linalg.svd(A, full_matrices=False)
        if s[-1] <= s[0] * 1e-12:
            raise ValueError("spanning vectors are linearly dependent")
        return cls(_fix_signs(U))

    @property
    def D(self) -> int:
        return self.basis.shape[0]

    @property
    def d(self) -> int:
        return self.basis.shape[1]

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    def complement(self) -> np.ndarray:
        """Orthonormal basis of the orthogonal complement, shape (D, D-d)."""
        Q, _ = np.linalg.qr(self.basis, mode="complete")
        return Q[:, self.d:]

    def distances(self, X) -> np.ndarray:
        """Euclidean distance of every column of ``X`` to the subspace."""
        X = np.asarray(X, dtype=float)
        R = X - self.basis @ (self.basis.T @ X)
        return np.linalg.norm(R, axis=0)


def principal_angle(A: Subspace, B: Subspace) -> float:
    """Largest principal angle between two equal-dimensional subspaces (radians).

    Uses ``atan2(sin, cos)`` so that angles near zero keep full precision.
    """
    if A.D != B.D or A.d != B.d:
        raise ValueError(f"dimension mismatch: ({A.D},{A.d}) vs ({B.D},{B.d})")
    G = A.basis.T @ B.basis
    cos_min = np.linalg.svd(G, compute_uv=False)[-1]
    resid = B.basis - A.basis @ G
    sin_max = np.linalg.norm(resid, 2)
    return float(np.arctan2(min(sin_max, 1.0), min(cos_min, 1.0)))


@dataclass(frozen=True)
class ScatterEstimate:
    """Trace-one symmetric positive semi-definite shape matrix with its spectrum."""

    matrix: np.ndarray
    spectrum: Spectrum = field(repr=False)

    @classmethod
    def from_matrix(cls, M, normalize: bool = True) -> "ScatterEstimate":
        M = np.asarray(M, dtype=float)
        M = (M + M.T) / 2
        if normalize:
            tr = np.trace(M)
            if not tr > 0:
                raise ValueError("scatter matrix must have positive trace")
            M = M / tr
        return cls(M, sym_evd(M))

    @property
    def D(self) -> int:
        return self.matrix.shape[0]

    def top_subspace(self, d: int) -> Subspace:
        return Subspace(self.spectrum.eigenvectors[:, :d])

    def mahalanobis(self, X) -> np.ndarray:
        """x^T Sigma^{-1} x for every column, via the cached spectrum."""
        lam = self.spectrum.eigenvalues
        lam = np.maximum(lam, EIG_FLOOR * max(lam[0], np.finfo(float).tiny))
        C = self.spectrum.eigenvectors.T @ np.asarray(X, dtype=float)
        return (C**2 / lam[:, None]).sum(axis=0)
