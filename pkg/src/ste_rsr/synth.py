"""Seeded synthetic data: haystack scenes, epipolar correspondences, n-view cameras."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .core import Subspace, _fix_signs
from .epipolar import DEFAULT_K, CorrespondenceSet, skew
from .nview import NViewEssential, assemble


@dataclass(frozen=True)
class HaystackConfig:
    """Generalized haystack model.

    Inliers are N(0, sigma_in / d) inside the planted subspace and outliers are
    N(0, sigma_out / D).  ``sigma_in`` may be d x d (coordinates in the planted
    basis) or D x D of rank d, in which case its range is the planted subspace.
    Defaults give the standard haystack model.
    """

    D: int
    d: int
    n_in: int
    n_out: int
    sigma_in: np.ndarray | None = None
    sigma_out: np.ndarray | None = None
    seed: int = 0
    planted_basis: Subspace | None = None

    def __post_init__(self):
        if not 1 <= self.d < self.D:
            raise ValueError("need 1 <= d < D")
        if self.n_in < 0 or self.n_out < 0:
            raise ValueError("counts must be nonnegative")


@dataclass
class SyntheticScene:
    data: np.ndarray
    truth: Subspace
    inlier_mask: np.ndarray
    sigma_in: np.ndarray  # d x d, in the coordinates of truth.basis
    sigma_out: np.ndarray  # D x D

    @property
    def n_in(self) -> int:
        return int(self.inlier_mask.sum())

    @property
    def n_out(self) -> int:
        return int((~self.inlier_mask).sum())


def random_subspace(D: int, d: int, rng: np.random.Generator) -> Subspace:
    Q, _ = np.linalg.qr(rng.standard_normal((D, d)))
    return Subspace(_fix_signs(Q))


def _psd_sqrt(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh((S + S.T) / 2)
    return (V * np.sqrt(np.maximum(w, 0.0))) @ V.T


def gen_haystack(cfg: HaystackConfig) -> SyntheticScene:
    rng = np.random.default_rng(cfg.seed)
    D, d = cfg.D, cfg.d
    if cfg.sigma_in is not None and np.shape(cfg.sigma_in) == (D, D):
        S = np.asarray(cfg.sigma_in, dtype=float)
        w, V = np.linalg.eigh((S + S.T) / 2)
        rank = int(np.sum(w > 1e-10 * max(w.max(), 1e-300)))
        if rank != d:
            raise ValueError(f"sigma_in has rank {rank}, expected d={d}")
        truth = Subspace(_fix_signs(V[:, ::-1][:, :d]))
        sig_in = truth.basis.T @ S @ truth.basis
    else:
        sig_in = np.eye(d) if cfg.sigma_in is None else np.asarray(cfg.sigma_in, dtype=float)
        if sig_in.shape != (d, d):
            raise ValueError(f"sigma_in must be {d}x{d} or {D}x{D}")
        if np.linalg.matrix_rank(sig_in) != d:
            raise ValueError(f"sigma_in must have rank d={d}")
        truth = cfg.planted_basis if cfg.planted_basis is not None else random_subspace(D, d, rng)
        if truth.D != D or truth.d != d:
            raise ValueError("planted basis has the wrong shape")
    sig_out = np.eye(D) if cfg.sigma_out is None else np.asarray(cfg.sigma_out, dtype=float)
    if sig_out.shape != (D, D) or np.linalg.eigvalsh((sig_out + sig_out.T) / 2).min() <= 0:
        raise ValueError("sigma_out must be a positive definite D x D matrix")

    inl = truth.basis @ (_psd_sqrt(sig_in / d) @ rng.standard_normal((d, cfg.n_in)))
    out = _psd_sqrt(sig_out / D) @ rng.standard_normal((D, cfg.n_out))
    X = np.hstack([inl, out])
    mask = np.concatenate([np.ones(cfg.n_in, bool), np.zeros(cfg.n_out, bool)])
    perm = rng.permutation(X.shape[1])
    return SyntheticScene(X[:, perm], truth, mask[perm], sig_in, sig_out)


def anisotropic_outlier_cov(truth: Subspace, coupling: float = 0.5, rng=None) -> np.ndarray:
    """I + c (u v^T + v u^T) with u in the subspace and v orthogonal to it.

    The cross term couples the subspace with its complement.  ``|c| < 1`` keeps
    the matrix positive definite.
    """
    if not abs(coupling) < 1:
        raise ValueError("coupling must satisfy |c| < 1")
    u = truth.basis[:, 0]
    v = truth.complement()[:, 0]
    return np.eye(truth.D) + coupling * (np.outer(u, v) + np.outer(v, u))


# ---------------------------------------------------------------------------
# two-view correspondences
# ---------------------------------------------------------------------------

def gen_epipolar(n_pairs: int, outlier_frac: float, seed: int = 0, max_angle_deg: float = 30.0,
                 K=DEFAULT_K, window: float = 1000.0, depth=(4.0, 8.0)) -> CorrespondenceSet:
    """Exact epipolar correspondences mixed with uniform outliers.

    The true pose is a random rotation of at most ``max_angle_deg`` degrees and a
    random unit translation.  Scene points are back-projected from camera a at
    random depths and kept only if both projections land inside the
    ``[0, window]^2`` image and in front of both cameras.  Outliers are pixel
    pairs drawn uniformly from the same window.
    """
    if not 0 <= outlier_frac <= 1:
        raise ValueError("outlier_frac must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    K = np.asarray(K, dtype=float)
    n_out = int(round(outlier_frac * n_pairs))
    n_in = n_pairs - n_out

    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    angle = np.radians(max_angle_deg) * rng.uniform()
    R = Rotation.from_rotvec(angle * axis).as_matrix()
    t = rng.standard_normal(3)
    t /= np.linalg.norm(t)

    Kinv = np.linalg.inv(K)
    a_pts, b_pts = [], []
    have = 0
    while have < n_in:
        m = max(2 * (n_in - have), 16)
        pix = np.vstack([rng.uniform(0, window, (2, m)), np.ones((1, m))])
        X = (Kinv @ pix) * rng.uniform(depth[0], depth[1], m)
        Xb = R @ X + t[:, None]
        ok = Xb[2] > 1e-6
        pb = K @ (Xb / np.where(ok, Xb[2], 1.0))
        ok &= (pb[0] >= 0) & (pb[0] <= window) & (pb[1] >= 0) & (pb[1] <= window)
        take = np.flatnonzero(ok)[: n_in - have]
        a_pts.append(pix[:, take])
        pb[2] = 1.0
        b_pts.append(pb[:, take])
        have += take.size
    A_in = np.hstack(a_pts) if a_pts else np.zeros((3, 0))
    B_in = np.hstack(b_pts) if b_pts else np.zeros((3, 0))

    ones = np.ones((1, n_out))
    A_out = np.vstack([rng.uniform(0, window, (2, n_out)), ones])
    B_out = np.vstack([rng.uniform(0, window, (2, n_out)), ones])
    A = np.hstack([A_in, A_out])
    B = np.hstack([B_in, B_out])
    mask = np.concatenate([np.ones(n_in, bool), np.zeros(n_out, bool)])
    perm = rng.permutation(n_pairs)
    return CorrespondenceSet(A[:, perm], B[:, perm], R=R, t=t, inlier_mask=mask[perm], K=K.copy())


# ---------------------------------------------------------------------------
# n-view essential matrices
# ---------------------------------------------------------------------------

@dataclass
class NViewScene:
    essential: NViewEssential
    rotations: np.ndarray  # n x 3 x 3, world-to-camera
    centers: np.ndarray  # n x 3 camera centers
    corrupted: np.ndarray  # indices of corrupted cameras


def pairwise_essential(R_i, c_i, R_j, c_j) -> np.ndarray:
    """R_i ([c_i]_x - [c_j]_x) R_j^T; gives a rank-6 symmetric block matrix."""
    return R_i @ (skew(c_i) - skew(c_j)) @ R_j.T


def random_essential(rng: np.random.Generator) -> np.ndarray:
    R = Rotation.random(random_state=rng).as_matrix()
    t = rng.standard_normal(3)
    return skew(t / np.linalg.norm(t)) @ R


def gen_nview(n: int, n_corrupt: int = 0, observed_frac: float = 1.0, seed: int = 0) -> NViewScene:
    """Consistent cameras with ``n_corrupt`` of them given random pairwise essentials.

    A corrupted camera c has every block E_cj replaced by an unrelated random
    essential matrix of the same Frobenius norm.  Blocks are observed
    independently with probability ``observed_frac`` (pairs, symmetric).
    """
    if n < 2 or not 0 <= n_corrupt <= n:
        raise ValueError("need n >= 2 and 0 <= n_corrupt <= n")
    rng = np.random.default_rng(seed)
    Rs = Rotation.random(n, random_state=rng).as_matrix()
    cs = rng.standard_normal((n, 3))
    bad = np.sort(rng.choice(n, size=n_corrupt, replace=False))
    bad_set = set(bad.tolist())
    blocks = {}
    for i in range(n):
        for j in range(i + 1, n):
            if observed_frac < 1 and rng.uniform() >= observed_frac:
                continue
            B = pairwise_essential(Rs[i], cs[i], Rs[j], cs[j])
            if i in bad_set or j in bad_set:
                Q = random_essential(rng)
                B = Q * (np.linalg.norm(B) / np.linalg.norm(Q))
            blocks[(i, j)] = B
    return NViewScene(assemble(blocks, n), Rs, cs, bad)


def planted_nview_matrix(n: int, seed: int = 0) -> np.ndarray:
    """Fully observed consistent n-view essential matrix (rank 6)."""
    return gen_nview(n, 0, 1.0, seed).essential.E
