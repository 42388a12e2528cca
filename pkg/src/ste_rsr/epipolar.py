"""Two-view fundamental-matrix estimation by robust subspace recovery.

Conventions used throughout:

* points are homogeneous 3 x N arrays with third row 1;
* the epipolar constraint is ``x_b^T F x_a = 0`` with camera a = [I | 0] and
  camera b = [R | t], so ``E = [t]_x R`` and ``F = K_b^{-T} E K_a^{-1}``;
* ``vec`` is column-major.  The lifted point ``vec(x_a x_b^T)`` is orthogonal
  to ``vec(F^T)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import _fix_signs
from .estimators import DEFAULT_GAMMAS, METHODS, fit_subspace, ransac_budget

SAMPSON_THRESHOLD = 0.75
DEFAULT_K = np.diag([1000.0, 1000.0, 1.0])


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _as_homogeneous(pts) -> np.ndarray:
    P = np.asarray(pts, dtype=float)
    if P.ndim != 2 or P.shape[0] != 3:
        raise ValueError(f"points must be a 3 x N homogeneous array, got shape {P.shape}")
    if not np.all(P[2] == 1.0):
        raise ValueError("third homogeneous coordinate must be exactly 1")
    return P


@dataclass
class CorrespondenceSet:
    """Matched points in two views, optionally with the true relative pose."""

    pts_a: np.ndarray
    pts_b: np.ndarray
    R: np.ndarray | None = None
    t: np.ndarray | None = None
    inlier_mask: np.ndarray | None = None
    K: np.ndarray = field(default_factory=lambda: DEFAULT_K.copy())

    def __post_init__(self):
        self.pts_a = _as_homogeneous(self.pts_a)
        self.pts_b = _as_homogeneous(self.pts_b)
        if self.pts_a.shape != self.pts_b.shape:
            raise ValueError("both views need the same number of points")
        if self.pts_a.shape[1] < 8:
            raise ValueError("at least 8 correspondences are required")
        if self.t is not None:
            self.t = np.asarray(self.t, dtype=float)
            self.t = self.t / np.linalg.norm(self.t)
        if self.R is not None:
            self.R = np.asarray(self.R, dtype=float)

    @classmethod
    def from_pixels(cls, xy_a, xy_b, **kw) -> "CorrespondenceSet":
        xy_a, xy_b = np.asarray(xy_a, dtype=float), np.asarray(xy_b, dtype=float)
        ones = np.ones((1, xy_a.shape[0]))
        return cls(np.vstack([xy_a.T, ones]), np.vstack([xy_b.T, ones]), **kw)

    @property
    def N(self) -> int:
        return self.pts_a.shape[1]

    @property
    def has_truth(self) -> bool:
        return self.R is not None and self.t is not None

    def true_fundamental(self) -> np.ndarray:
        if not self.has_truth:
            raise ValueError("no ground-truth pose")
        Kinv = np.linalg.inv(self.K)
        F = Kinv.T @ skew(self.t) @ self.R @ Kinv
        return F / np.linalg.norm(F)


@dataclass(frozen=True)
class NormalizingTransform:
    T: np.ndarray
    mean: np.ndarray
    std: np.ndarray


@dataclass
class FundamentalEstimate:
    F: np.ndarray
    method: str
    inlier_mask: np.ndarray
    sampson: np.ndarray
    extra: dict = field(default_factory=dict)


def normalize(pts) -> tuple[np.ndarray, NormalizingTransform]:
    """Shift to zero mean and scale each image axis to unit (population) std."""
    P = _as_homogeneous(pts)
    mean = P[:2].mean(axis=1)
    std = P[:2].std(axis=1)
    if np.any(std <= 0):
        raise ValueError("degenerate point set: zero spread along an image axis")
    T = np.array([
        [1 / std[0], 0.0, -mean[0] / std[0]],
        [0.0, 1 / std[1], -mean[1] / std[1]],
        [0.0, 0.0, 1.0],
    ])
    return T @ P, NormalizingTransform(T, mean, std)


def lift(pts_a, pts_b) -> np.ndarray:
    """Columns vec(x_a x_b^T) (column-major), shape 9 x N."""
    A, B = np.asarray(pts_a, dtype=float), np.asarray(pts_b, dtype=float)
    # entry i + 3 j holds a_i b_j
    return (B[:, None, :] * A[None, :, :]).reshape(9, -1)


def unlift_normal(n) -> np.ndarray:
    """Fundamental matrix whose constraint b^T F a = 0 has lifted normal ``n``."""
    return np.asarray(n, dtype=float).reshape(3, 3, order="F").T


def rank2_project(F) -> np.ndarray:
    U, s, Vt = np.linalg.svd(np.asarray(F, dtype=float))
    s[2] = 0.0
    return (U * s) @ Vt


def _unit_signed(F: np.ndarray) -> np.ndarray:
    F = F / np.linalg.norm(F)
    return _fix_signs(F.reshape(9, 1)).reshape(3, 3)


def sampson(F, pts_a, pts_b) -> np.ndarray:
    """First-order geometric (Sampson) distance of every pair, in pixels."""
    Fa = F @ pts_a
    Ftb = F.T @ pts_b
    e = np.einsum("ij,ij->j", pts_b, Fa)
    denom = Fa[0] ** 2 + Fa[1] ** 2 + Ftb[0] ** 2 + Ftb[1] ** 2
    return np.abs(e) / np.sqrt(np.maximum(denom, np.finfo(float).tiny))


def _f_from_normalized(n, Ta, Tb) -> np.ndarray:
    F_hat = rank2_project(unlift_normal(n))
    return _unit_signed(Tb.T @ F_hat @ Ta)


def _eight_point(A, B) -> np.ndarray | None:
    """Least-squares F from >= 8 pairs, normalizing just these points."""
    try:
        a_hat, ta = normalize(A)
        b_hat, tb = normalize(B)
    except ValueError:
        return None
    Y = lift(a_hat, b_hat)
    U, s, _ = np.linalg.svd(Y, full_matrices=True)
    if Y.shape[1] >= 8 and s[7] <= 1e-12 * s[0]:
        return None
    return _f_from_normalized(U[:, 8], ta.T, tb.T)


def ransac_fundamental(corr: CorrespondenceSet, threshold: float = SAMPSON_THRESHOLD,
                       max_iters: int = 1000, confidence: float = 0.99, seed: int = 0):
    """Vanilla 8-point RANSAC with per-sample normalization and Sampson scoring."""
    A, B, N = corr.pts_a, corr.pts_b, corr.N
    rng = np.random.default_rng(seed)
    best_mask, best_count = None, -1
    budget: float = max_iters
    it = 0
    while it < budget:
        it += 1
        idx = rng.choice(N, size=8, replace=False)
        F = _eight_point(A[:, idx], B[:, idx])
        if F is None:
            continue
        mask = sampson(F, A, B) < threshold
        count = int(mask.sum())
        if count > best_count:
            best_mask, best_count = mask, count
            budget = min(max_iters, ransac_budget(count / N, 8, confidence))
    if best_mask is None:
        raise RuntimeError("RANSAC found no non-degenerate 8-point sample")
    F = _eight_point(A[:, best_mask], B[:, best_mask]) if best_count >= 8 else None
    if F is None:
        F = _eight_point(A, B)
    return F, it


def estimate_f(corr: CorrespondenceSet, method: str = "ste", *, gamma: float | None = None,
               gammas=DEFAULT_GAMMAS, threshold: float = SAMPSON_THRESHOLD, max_iters: int | None = None,
               seed: int = 0) -> FundamentalEstimate:
    """Estimate F with one of the subspace methods or 8-point RANSAC.

    The subspace methods normalize both views over all points, lift each pair
    to R^9, fit an 8-dimensional subspace and read F off its normal vector,
    then project to rank two and undo the normalization.  ``gamma=None`` with
    STE tunes gamma over ``gammas``.  The inlier mask is Sampson distance
    below ``threshold`` pixels.
    """
    method = method.lower()
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    extra: dict = {}
    if method == "ransac":
        F, iters = ransac_fundamental(corr, threshold, max_iters or 1000, seed=seed)
        extra["iterations"] = iters
    else:
        a_hat, ta = normalize(corr.pts_a)
        b_hat, tb = normalize(corr.pts_b)
        Y = lift(a_hat, b_hat)
        s = np.linalg.svd(Y, compute_uv=False)
        if s[7] <= 1e-12 * s[0]:
            raise ValueError(f"degenerate correspondences: lifted data has rank < 8 (s8/s1 = {s[7] / s[0]:.2e})")
        res = fit_subspace(Y, 8, method, gamma=gamma, gammas=gammas, max_iters=max_iters)
        n = res.subspace.complement()[:, 0]
        F = _f_from_normalized(n, ta.T, tb.T)
        extra["iterations"] = res.iterations
        if res.gamma is not None:
            extra["gamma"] = res.gamma
    dist = sampson(F, corr.pts_a, corr.pts_b)
    return FundamentalEstimate(F, method, dist < threshold, dist, extra)


# ---------------------------------------------------------------------------
# relative pose
# ---------------------------------------------------------------------------

@dataclass
class PoseEstimate:
    R: np.ndarray
    t: np.ndarray
    front_fraction: float
    ambiguous: bool


_W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def pose_candidates(E) -> list[tuple[np.ndarray, np.ndarray]]:
    U, _, Vt = np.linalg.svd(np.asarray(E, dtype=float))
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    t = U[:, 2]
    R1, R2 = U @ _W @ Vt, U @ _W.T @ Vt
    return [(R1, t), (R1, -t), (R2, t), (R2, -t)]


def _front_of_both(R, t, a, b) -> np.ndarray:
    """Midpoint triangulation depths; True where both are positive."""
    c = R.T @ b  # ray direction of camera b in camera-a coordinates
    rhs = -R.T @ t
    aa = np.einsum("ij,ij->j", a, a)
    cc = np.einsum("ij,ij->j", c, c)
    ac = np.einsum("ij,ij->j", a, c)
    ar = a.T @ rhs
    cr = c.T @ rhs
    # normal equations of [a, -c] [l1; l2] = rhs
    det = aa * cc - ac**2
    ok = np.abs(det) > 1e-12 * aa * cc
    det = np.where(ok, det, 1.0)
    l1 = (cc * ar - ac * cr) / det
    l2 = (ac * ar - aa * cr) / det
    return ok & (l1 > 0) & (l2 > 0)


def decompose_pose(F, pts_a, pts_b, K=DEFAULT_K, K_b=None, mask=None) -> PoseEstimate:
    """Relative pose (R, unit t) from F by the four-fold SVD ambiguity and cheirality.

    The candidate with the most pairs (restricted to ``mask`` if given)
    triangulating in front of both cameras wins; if none exceeds half the
    pairs the result is flagged ``ambiguous``.
    """
    F = np.asarray(F, dtype=float)
    if not np.linalg.norm(F) > 0:
        raise ValueError("fundamental matrix is zero")
    K = np.asarray(K, dtype=float)
    K_b = K if K_b is None else np.asarray(K_b, dtype=float)
    E = K_b.T @ F @ K
    a = np.linalg.solve(K, np.asarray(pts_a, dtype=float))
    b = np.linalg.solve(K_b, np.asarray(pts_b, dtype=float))
    if mask is not None and np.count_nonzero(mask) > 0:
        a, b = a[:, mask], b[:, mask]
    best, best_frac = None, -1.0
    for R, t in pose_candidates(E):
        frac = float(_front_of_both(R, t, a, b).mean())
        if frac > best_frac:
            best, best_frac = (R, t), frac
    R, t = best
    return PoseEstimate(R, t / np.linalg.norm(t), best_frac, best_frac <= 0.5)


def relative_pose(R_i, t_i, R_j, t_j) -> tuple[np.ndarray, np.ndarray]:
    """Pose of camera j relative to camera i for world-to-camera maps X -> R X + t."""
    R_ij = np.asarray(R_j) @ np.asarray(R_i).T
    t_ij = np.asarray(t_j) - R_ij @ np.asarray(t_i)
    return R_ij, t_ij / np.linalg.norm(t_ij)


# ---------------------------------------------------------------------------
# error metrics
# ---------------------------------------------------------------------------

def _check_rotation(R, name: str) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError(f"{name} must be 3 x 3")
    if np.linalg.norm(R.T @ R - np.eye(3)) > 1e-6 or np.linalg.det(R) <= 0:
        raise ValueError(f"{name} is not a proper rotation")
    return R


def rotation_error(R_est, R_true) -> float:
    """Geodesic distance between two rotations, in degrees."""
    Q = _check_rotation(R_true, "R_true").T @ _check_rotation(R_est, "R_est")
    # atan2 of (sin, cos) keeps precision near 0 and 180 degrees
    sin = np.linalg.norm(Q - Q.T) / (2 * math.sqrt(2))
    cos = (np.trace(Q) - 1) / 2
    return math.degrees(math.atan2(sin, cos))


def align_rotation(t_est, t_true) -> np.ndarray:
    """Proper rotation R minimizing sum ||t_true_i - R t_est_i||^2."""
    H = np.asarray(t_est, dtype=float).T @ np.asarray(t_true, dtype=float)
    U, _, Vt = np.linalg.svd(H)
    S = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    return Vt.T @ S @ U.T


def direction_errors(t_est, t_true, align: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Angular errors (degrees, in [0, 90]) of unit directions after global alignment.

    ``t_est`` and ``t_true`` are sequences of 3-vectors.  Returns the errors and
    the aligning rotation (identity when ``align`` is false).
    """
    A = np.atleast_2d(np.asarray(t_est, dtype=float))
    B = np.atleast_2d(np.asarray(t_true, dtype=float))
    if A.size == 0 or B.size == 0:
        raise ValueError("empty direction lists")
    if A.shape != B.shape or A.shape[1] != 3:
        raise ValueError("direction lists must have equal length and 3-vectors")
    A = A / np.linalg.norm(A, axis=1, keepdims=True)
    B = B / np.linalg.norm(B, axis=1, keepdims=True)
    R = align_rotation(A, B) if align else np.eye(3)
    cos = np.abs(np.einsum("ij,ij->i", B, A @ R.T))
    return np.degrees(np.arccos(np.clip(cos, 0.0, 1.0))), R


def maa(errors, max_threshold: int = 10) -> float:
    """Mean over thresholds 1..max_threshold degrees of the fraction of errors below each."""
    e = np.asarray(errors, dtype=float).ravel()
    if e.size == 0:
        raise ValueError("empty error list")
    if np.any(e < 0):
        raise ValueError("errors must be nonnegative")
    taus = np.arange(1, int(max_threshold) + 1)
    return float(np.mean([(e < tau).mean() for tau in taus]))
