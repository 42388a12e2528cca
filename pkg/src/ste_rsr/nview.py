"""Camera screening through the low rank of the n-view essential matrix.

The n-view essential matrix stacks the scaled pairwise essential matrices
``lambda_ij E_ij`` into a symmetric 3n x 3n block matrix with zero diagonal
blocks.  For consistent cameras it has rank 6, so its columns are inliers of a
6-dimensional subspace and cameras with corrupted pairwise estimates show up as
outlying columns.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import center
from .estimators import SteConfig, fit_subspace, ste


@dataclass
class NViewEssential:
    """Symmetric block matrix with a block observation mask.

    ``mask[i, j]`` is True when block (i, j) is observed; it is symmetric with a
    False diagonal.  Unobserved blocks of ``E`` hold zeros.
    """

    E: np.ndarray
    mask: np.ndarray
    scales: np.ndarray
    n: int

    def __post_init__(self):
        self.E = np.asarray(self.E, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.E.shape != (3 * self.n, 3 * self.n) or self.mask.shape != (self.n, self.n):
            raise ValueError("shape mismatch between E, mask and n")
        if not np.array_equal(self.E, self.E.T):
            raise ValueError("E must be exactly symmetric")
        if not np.array_equal(self.mask, self.mask.T) or self.mask.diagonal().any():
            raise ValueError("mask must be symmetric with an unobserved diagonal")

    def block(self, i: int, j: int) -> np.ndarray:
        return self.E[3 * i:3 * i + 3, 3 * j:3 * j + 3]

    def entry_mask(self) -> np.ndarray:
        return np.kron(self.mask, np.ones((3, 3), dtype=bool))

    @property
    def n_observed(self) -> int:
        """|Omega|: number of observed ordered blocks (i, j), i != j."""
        return int(self.mask.sum())

    def rescaled(self, c: float) -> "NViewEssential":
        return NViewEssential(c * self.E, self.mask.copy(), c * self.scales, self.n)


def scale_factor(E, E_ref) -> float:
    """Least-squares scale <E, E_ref> / ||E_ref||_F^2."""
    E_ref = np.asarray(E_ref, dtype=float)
    return float(np.sum(np.asarray(E, dtype=float) * E_ref) / np.sum(E_ref**2))


def assemble(blocks: Mapping[tuple[int, int], np.ndarray], n: int,
             scales: Mapping[tuple[int, int], float] | None = None, atol: float = 1e-9) -> NViewEssential:
    """Place ``lambda_ij * E_ij`` at block (i, j) and its transpose at (j, i)."""
    scales = dict(scales or {})
    E = np.zeros((3 * n, 3 * n))
    mask = np.zeros((n, n), dtype=bool)
    lam = np.zeros((n, n))
    for (i, j), B in blocks.items():
        i, j = int(i), int(j)
        if i == j:
            raise ValueError(f"diagonal block ({i}, {i}) cannot be observed")
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"block index ({i}, {j}) out of range for n={n}")
        B = np.asarray(B, dtype=float).reshape(3, 3)
        s = float(scales.get((i, j), scales.get((j, i), 1.0)))
        if (j, i) in blocks and i > j:
            other = np.asarray(blocks[(j, i)], dtype=float).reshape(3, 3)
            if np.max(np.abs(other.T - B)) > atol * max(1.0, np.abs(B).max()):
                raise ValueError(f"blocks ({i}, {j}) and ({j}, {i}) are not transposes")
            continue
        E[3 * i:3 * i + 3, 3 * j:3 * j + 3] = s * B
        E[3 * j:3 * j + 3, 3 * i:3 * i + 3] = s * B.T
        mask[i, j] = mask[j, i] = True
        lam[i, j] = lam[j, i] = s
    return NViewEssential(E, mask, lam, n)


def svt_step_size(n: int, n_observed: int) -> float:
    """delta = n^2 / (10 |Omega|) with n the number of block rows."""
    if n_observed < 1:
        raise ValueError("no observed blocks")
    return n * n / (10 * n_observed)


@dataclass
class SvtResult:
    M: np.ndarray
    iterations: int
    residuals: list[float]
    converged: bool
    mu: float
    delta: float


def _shrink(Y: np.ndarray, mu: float) -> tuple[np.ndarray, int]:
    U, s, Vt = np.linalg.svd(Y, full_matrices=False)
    s = np.maximum(s - mu, 0.0)
    r = int(np.count_nonzero(s))
    return (U[:, :r] * s[:r]) @ Vt[:r], r


def svt(M_obs: np.ndarray, omega: np.ndarray, delta: float, mu: float | None = None,
        max_iters: int = 2000, tol: float = 1e-6, patience: int = 50) -> SvtResult:
    """Singular value thresholding for nuclear-norm matrix completion.

    ``omega`` is an entrywise boolean mask.  Iterates
    ``X = shrink_mu(Y); Y += delta * P_omega(M - X)`` from a scaled start
    ``Y0 = k0 delta P_omega(M)`` that skips the iterations where ``X`` would be zero.
    Stops once ``||P_omega(X - M)|| / ||P_omega(M)|| < tol``.
    """
    M_obs = np.where(omega, np.asarray(M_obs, dtype=float), 0.0)
    norm_obs = np.linalg.norm(M_obs)
    if norm_obs == 0:
        return SvtResult(np.zeros_like(M_obs), 0, [], True, 0.0, delta)
    spec = np.linalg.norm(M_obs, 2)
    if mu is None:
        mu = 5.0 * spec
    k0 = math.ceil(mu / (delta * spec))
    Y = k0 * delta * M_obs
    residuals: list[float] = []
    best, grow = np.inf, 0
    X = np.zeros_like(M_obs)
    for _ in range(max_iters):
        X, _ = _shrink(Y, mu)
        R = np.where(omega, M_obs - X, 0.0)
        res = float(np.linalg.norm(R) / norm_obs)
        residuals.append(res)
        if res < tol:
            return SvtResult(X, len(residuals), residuals, True, mu, delta)
        if len(residuals) > 1 and res > residuals[-2]:
            grow += 1
            if grow >= patience:
                raise RuntimeError(f"SVT diverging (residual grew {patience} consecutive iterations); "
                                   "try a smaller step size delta")
        else:
            grow = 0
        Y = Y + delta * R
    return SvtResult(X, len(residuals), residuals, False, mu, delta)


def svt_complete(E: NViewEssential, mu: float | None = None, max_iters: int = 2000,
                 tol: float = 1e-6, delta: float | None = None) -> SvtResult:
    """Complete the missing blocks of an n-view essential matrix.

    Observed blocks and the (known, zero) diagonal blocks form the entrywise
    sampling set; the step size defaults to n^2 / (10 |Omega|).
    """
    if delta is None:
        delta = svt_step_size(E.n, E.n_observed)
    omega = np.kron(E.mask | np.eye(E.n, dtype=bool), np.ones((3, 3), dtype=bool))
    res = svt(E.E, omega, delta, mu, max_iters, tol)
    res.M = (res.M + res.M.T) / 2
    return res


def project_essential(M) -> np.ndarray:
    """Nearest matrix with singular values (1, 1, 0): U diag(1, 1, 0) V^T."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    return U[:, :2] @ Vt[:2]


def fill_missing(E: NViewEssential, completion: str = "zero", **svt_kw) -> np.ndarray:
    """Matrix with missing off-diagonal blocks filled by zeros or projected SVT blocks."""
    M = E.E.copy()
    if completion == "zero":
        return M
    if completion != "svt":
        raise ValueError(f"unknown completion {completion!r}; expected 'zero' or 'svt'")
    if E.mask.all(where=~np.eye(E.n, dtype=bool)):
        return M
    Mhat = svt_complete(E, **svt_kw).M
    for i in range(E.n):
        for j in range(i + 1, E.n):
            if not E.mask[i, j]:
                B = project_essential(Mhat[3 * i:3 * i + 3, 3 * j:3 * j + 3])
                M[3 * i:3 * i + 3, 3 * j:3 * j + 3] = B
                M[3 * j:3 * j + 3, 3 * i:3 * i + 3] = B.T
    return M


@dataclass
class ScreeningReport:
    column_distances: np.ndarray
    flagged_columns: np.ndarray
    removed_cameras: np.ndarray
    distance_ratio: float
    method: str
    extra: dict = field(default_factory=dict)

    def sorted_distances(self) -> np.ndarray:
        """Column distances in descending order."""
        return np.sort(self.column_distances)[::-1]

    def to_dict(self) -> dict:
        return {
            "column_distances": self.column_distances.tolist(),
            "flagged_columns": self.flagged_columns.tolist(),
            "removed_cameras": self.removed_cameras.tolist(),
            "distance_ratio": self.distance_ratio,
            "method": self.method,
        }


def screen(E: NViewEssential, method: str = "ste", d: int = 6, outlier_frac: float = 0.2,
           completion: str = "zero", gamma: float = 1 / 3, **svt_kw) -> ScreeningReport:
    """Flag the most outlying columns of the n-view essential matrix.

    Missing blocks are filled per ``completion``, columns are centered, a
    d-dimensional subspace is fitted robustly and the ``ceil(outlier_frac * 3n)``
    columns farthest from it are flagged.  A camera is removed when any of its
    three columns is flagged.  ``distance_ratio`` is the smallest flagged
    distance over the largest unflagged one; values near 1 mean no clear
    outliers.
    """
    if E.n < 4:
        raise ValueError("screening needs at least 4 cameras")
    M = fill_missing(E, completion, **svt_kw)
    X, _ = center(M)
    method = method.lower()
    if method == "ste":
        L = ste(X, SteConfig(d=d, gamma=gamma)).subspace
    else:
        L = fit_subspace(X, d, method).subspace
    dist = L.distances(X)
    n_flag = math.ceil(outlier_frac * 3 * E.n - 1e-9)
    order = np.argsort(-dist, kind="stable")
    flagged = np.sort(order[:n_flag])
    rest = order[n_flag:]
    lo = dist[order[n_flag - 1]] if n_flag > 0 else np.inf
    hi = dist[rest].max() if rest.size else 0.0
    if hi > 0:
        ratio = float(lo / hi)
    else:
        ratio = 1.0 if lo == 0 else math.inf
    removed = np.unique(flagged // 3)
    return ScreeningReport(dist, flagged, removed, ratio, method)
