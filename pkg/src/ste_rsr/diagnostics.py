"""Computable statistics from the recovery theory of STE.

These quantify how favorable a dataset and an initial scatter matrix are for
STE: the dimension-scaled SNR, the initialization condition numbers kappa_1 and
kappa_2, the inlier condition number kappa_in, the outlier alignment A, the
stability S and the right-hand side of the initialization condition (with its
unknown constant set to one).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .core import ScatterEstimate, Subspace, as_data_matrix
from .estimators import tme

_ZERO = 1e-12


def ds_snr(n1: int, n0: int, d: int, D: int) -> float:
    """(n1 / d) / (n0 / (D - d)); infinite without outliers."""
    if not 0 < d < D:
        raise ValueError("need 0 < d < D")
    if n0 == 0:
        return math.inf
    return (n1 / d) / (n0 / (D - d))


def assumption2_holds(gamma: float, snr: float) -> bool:
    """Whether DS-SNR exceeds the shrinkage parameter gamma."""
    return gamma < snr


def _matrix(S) -> np.ndarray:
    return S.matrix if isinstance(S, ScatterEstimate) else np.asarray(S, dtype=float)


def scatter_blocks(S, L: Subspace):
    """(S_{L,L}, S_{L,L_perp}, S_{L_perp,L_perp}) in the bases of L and its complement."""
    M = _matrix(S)
    U, W = L.basis, L.complement()
    return U.T @ M @ U, U.T @ M @ W, W.T @ M @ W


def kappa1(S0, L: Subspace) -> float:
    """sigma_d of the Schur complement of the L_perp block over sigma_1 of that block.

    Infinite when the range of ``S0`` is ``L`` itself.
    """
    A, B, C = scatter_blocks(S0, L)
    scale = max(np.linalg.norm(_matrix(S0), 2), np.finfo(float).tiny)
    c_norm = np.linalg.norm(C, 2)
    if c_norm <= _ZERO * scale:
        if np.linalg.norm(B, 2) <= _ZERO * scale:
            return math.inf
        raise ValueError("complement block vanishes but the cross block does not")
    c_min = np.linalg.eigvalsh(C).min()
    if c_min <= _ZERO * c_norm:
        raise ValueError("complement block of the initial scatter is singular")
    schur = A - B @ np.linalg.solve(C, B.T)
    s_d = np.linalg.svd((schur + schur.T) / 2, compute_uv=False)[-1]
    return float(s_d / c_norm)


def kappa2(S0, L: Subspace) -> float:
    """sigma_1 of the L_perp block over the smallest eigenvalue of ``S0``."""
    _, _, C = scatter_blocks(S0, L)
    lam_min = np.linalg.eigvalsh(_matrix(S0)).min()
    if lam_min <= 0:
        return math.inf
    return float(np.linalg.norm(C, 2) / lam_min)


def kappa_in(X_in, L: Subspace) -> float:
    """Condition number of the TME solution for the inliers in the coordinates of L."""
    Y = L.basis.T @ np.asarray(X_in, dtype=float)
    if L.d == 1:
        return 1.0
    Y = Y[:, np.linalg.norm(Y, axis=0) > 0]
    if Y.shape[1] < L.d:
        raise ValueError("need at least d inliers")
    lam = tme(Y).scatter.spectrum.eigenvalues
    return float(lam[0] / lam[-1]) if lam[-1] > 0 else math.inf


def alignment(X_out, L: Subspace) -> float:
    """Spectral norm of sum over outliers of x x^T / ||P_{L_perp} x||^2."""
    X = np.asarray(X_out, dtype=float)
    if X.size == 0:
        return 0.0
    r = np.linalg.norm(L.complement().T @ X, axis=0)
    inside = r < 1e-12
    if inside.any():
        warnings.warn(f"excluding {int(inside.sum())} outlier(s) lying in the subspace", RuntimeWarning, stacklevel=2)
        X, r = X[:, ~inside], r[~inside]
    if X.shape[1] == 0:
        return 0.0
    Y = X / r
    return float(np.linalg.norm(Y @ Y.T, 2))


def stability(X, d: int) -> float:
    """Mean of the bottom D - d eigenvalues of sum x x^T / ||x||^2."""
    X = as_data_matrix(X)
    X = X[:, np.linalg.norm(X, axis=0) > 0]
    Y = X / np.linalg.norm(X, axis=0)
    lam = np.linalg.eigvalsh(Y @ Y.T)[::-1]
    return float(lam[d:].mean())


def assumption3_rhs(d: int, D: int, n1: int, n0: int, gamma: float, k_in: float, k2: float,
                    A: float, S: float) -> float:
    """Right-hand side of the initialization condition on kappa_1, constant taken as 1."""
    margin = n1 / d - gamma * n0 / (D - d)
    if margin <= 0 or S <= 0:
        return math.inf
    return d * k_in * A / n1 * (k_in + A / margin + k2 * A / (gamma * S) * (1 + k_in))


def assumption1_spot_check(X_in, L: Subspace, trials: int = 200, seed: int = 0, tol: float = 1e-9):
    """Randomized check that k-subspaces of L hold at most n1 k / d inliers.

    Each trial spans a random k-subspace by k random inliers and counts inliers
    lying in it.  Returns ``(passed, worst_ratio)`` where the ratio is
    count / (n1 k / d); this is a heuristic, not a proof.
    """
    Y = L.basis.T @ np.asarray(X_in, dtype=float)
    d, n1 = Y.shape
    if n1 == 0:
        return True, 0.0
    rng = np.random.default_rng(seed)
    norms = np.linalg.norm(Y, axis=0)
    worst = 0.0
    for _ in range(trials):
        k = int(rng.integers(1, d)) if d > 1 else 1
        if k >= n1:
            continue
        Q, s, _ = np.linalg.svd(Y[:, rng.choice(n1, k, replace=False)], full_matrices=False)
        Q = Q[:, s > 1e-12 * max(s[0], 1e-300)]
        resid = np.linalg.norm(Y - Q @ (Q.T @ Y), axis=0)
        count = int(np.sum(resid <= tol * np.maximum(norms, 1e-300)))
        worst = max(worst, count / (n1 * Q.shape[1] / d))
    return worst <= 1.0, worst


@dataclass
class SceneStats:
    ds_snr: float
    kappa1: float
    kappa2: float
    kappa_in: float
    alignment_A: float
    stability_S: float
    assumption3_rhs_c1: float
    kappa1_over_rhs: float
    assumption2: bool

    def to_dict(self) -> dict:
        return {k: (v if not isinstance(v, float) or math.isfinite(v) else str(v)) for k, v in asdict(self).items()}


def scene_stats(scene, S0, gamma: float = 0.5) -> SceneStats:
    """All theory statistics for a synthetic scene and initial scatter ``S0``."""
    X, L, m = scene.data, scene.truth, np.asarray(scene.inlier_mask, bool)
    D, d = L.D, L.d
    n1, n0 = int(m.sum()), int((~m).sum())
    snr = ds_snr(n1, n0, d, D)
    k1 = kappa1(S0, L)
    k2 = kappa2(S0, L)
    kin = kappa_in(X[:, m], L)
    A = alignment(X[:, ~m], L)
    S = stability(X, d)
    rhs = assumption3_rhs(d, D, n1, n0, gamma, kin, k2, A, S)
    ratio = k1 / rhs if rhs > 0 else math.inf
    return SceneStats(snr, k1, k2, kin, A, S, rhs, ratio, assumption2_holds(gamma, snr))
