"""Robust subspace estimators: STE, TME, FMS/SFMS and subspace RANSAC.

Every estimator takes a ``(D, N)`` data matrix whose columns are points and
returns an :class:`EstimatorResult`.  The data model is a *linear* subspace, so
inputs are used as given; center them beforehand if an affine fit is wanted.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from .core import (
    EIG_FLOOR,
    ScatterEstimate,
    Spectrum,
    Subspace,
    _fix_signs,
    as_data_matrix,
    principal_angle,
    sym_evd,
)

METHODS = ("ste", "tme", "fms", "sfms", "ransac")

#: gamma grid {1/(2i)}, i = 1..5
DEFAULT_GAMMAS = (1 / 2, 1 / 4, 1 / 6, 1 / 8, 1 / 10)

# entries per column block in the STE residual computation
_CHUNK_ENTRIES = 1 << 15


@dataclass(frozen=True)
class SteConfig:
    """Parameters of the subspace-constrained Tyler's estimator.

    ``init`` is ``"identity"`` (Sigma0 = I/D), ``"tme"`` (Sigma0 = TME solution)
    or an explicit :class:`ScatterEstimate` / array.  ``solver`` selects how the
    top-d eigenpairs of the weighted covariance are found: ``"dense"`` forms the
    D x D matrix, ``"lanczos"`` only touches the reweighted data (O(NDd) per
    iteration) and ``"auto"`` picks lanczos when D >= 64 and d <= D/4.
    """

    d: int
    gamma: float = 0.5
    max_iters: int = 200
    tol: float = 1e-10
    mahalanobis_floor: float = 1e-15
    init: Union[str, ScatterEstimate, np.ndarray] = "identity"
    solver: str = "auto"

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.solver not in ("auto", "dense", "lanczos"):
            raise ValueError(f"unknown solver {self.solver!r}")


@dataclass
class EstimatorResult:
    """Output of a subspace estimator.

    ``steps`` holds one entry per iteration: the Frobenius step between
    consecutive scatter iterates (STE, TME), the principal-angle change (FMS)
    or the best consensus ratio so far (RANSAC).  ``angles`` is filled with
    the per-iteration angle to a ground-truth subspace when one is supplied.
    """

    subspace: Subspace | None
    scatter: ScatterEstimate | None
    iterations: int
    steps: list[float]
    converged: bool
    angles: list[float] | None = None
    inliers: np.ndarray | None = None
    gamma: float | None = None
    method: str = ""
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RansacConfig:
    d: int
    inlier_threshold: float
    max_iters: int = 1000
    confidence: float = 0.99
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


def _drop_zero_columns(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=0)
    zero = norms == 0
    if zero.any():
        warnings.warn(f"dropping {int(zero.sum())} zero column(s)", RuntimeWarning, stacklevel=3)
        X = X[:, ~zero]
        if X.shape[1] == 0:
            raise ValueError("empty dataset")
    return X


def _check_dims(X: np.ndarray, d: int):
    D = X.shape[0]
    if not 1 <= d < D:
        raise ValueError(f"subspace dimension d={d} must satisfy 1 <= d < D={D}")


# ---------------------------------------------------------------------------
# STE
# ---------------------------------------------------------------------------

@dataclass
class _LowRankScatter:
    """sigma0 * I + U diag(s - sigma0) U^T with trace one."""

    s: np.ndarray
    U: np.ndarray
    sigma0: float

    def mahalanobis(self, X: np.ndarray) -> np.ndarray:
        floor = EIG_FLOOR * max(self.s[0], np.finfo(float).tiny)
        s = np.maximum(self.s, floor)
        sigma0 = max(self.sigma0, floor)
        C = self.U.T @ X
        top = (C**2 / s[:, None]).sum(axis=0)
        # residuals formed directly (not |x|^2 - |C|^2) to keep precision near the
        # subspace; column blocks keep the D x block temporary in cache
        r2 = np.empty(X.shape[1])
        step = max(1, _CHUNK_ENTRIES // X.shape[0])
        for j in range(0, X.shape[1], step):
            R = X[:, j:j + step] - self.U @ C[:, j:j + step]
            r2[j:j + step] = np.einsum("ij,ij->j", R, R)
        return top + r2 / sigma0

    def matrix(self) -> np.ndarray:
        D = self.U.shape[0]
        M = (self.U * (self.s - self.sigma0)) @ self.U.T
        M[np.diag_indices(D)] += self.sigma0
        return M

    def to_scatter(self) -> ScatterEstimate:
        D, d = self.U.shape
        Q, _ = np.linalg.qr(self.U, mode="complete")
        V = np.hstack([self.U, _fix_signs(Q[:, d:])])
        vals = np.concatenate([self.s, np.full(D - d, self.sigma0)])
        return ScatterEstimate(self.matrix(), Spectrum(vals, V))


def shrink_spectrum(eigenvalues, d: int, gamma: float) -> np.ndarray:
    """Replace the bottom D-d eigenvalues by gamma times their mean; scale to sum one."""
    lam = np.maximum(np.asarray(eigenvalues, dtype=float), 0.0)
    D = lam.size
    out = lam.copy()
    out[d:] = gamma * lam[d:].mean()
    return out / out.sum()


def _shrink_top(s: np.ndarray, trace: float, D: int, gamma: float) -> tuple[np.ndarray, float]:
    d = s.size
    s = np.maximum(s, 0.0)
    bottom_mean = max((trace - s.sum()) / (D - d), 0.0)
    beta = gamma * bottom_mean
    total = s.sum() + (D - d) * beta
    return s / total, beta / total


def _top_eigs_dense(X: np.ndarray, w: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray, float]:
    Z = (X * w) @ X.T
    Z = (Z + Z.T) / 2
    spec = sym_evd(Z)
    return spec.eigenvalues[:d], spec.eigenvectors[:, :d], float(np.trace(Z))


def _top_eigs_lanczos(X: np.ndarray, w: np.ndarray, d: int, v0: np.ndarray):
    Xt = X * np.sqrt(w)
    D = X.shape[0]
    op = LinearOperator((D, D), matvec=lambda v: Xt @ (Xt.T @ v), dtype=float)
    vals, vecs = eigsh(op, k=d, which="LA", v0=v0, tol=0)
    order = np.argsort(vals)[::-1]
    trace = float(np.einsum("ij,ij->", Xt, Xt))
    return vals[order], _fix_signs(vecs[:, order]), trace


def _initial_scatter(X: np.ndarray, cfg: SteConfig):
    """Return (mahalanobis function of Sigma0, dense Sigma0)."""
    D = X.shape[0]
    init = cfg.init
    if isinstance(init, str):
        if init == "identity":
            return (lambda Y: D * np.einsum("ij,ij->j", Y, Y)), np.eye(D) / D
        if init == "tme":
            sc = tme(X, max_iters=1000, tol=1e-12, mahalanobis_floor=cfg.mahalanobis_floor).scatter
            return sc.mahalanobis, sc.matrix
        raise ValueError(f"unknown init {init!r}")
    if not isinstance(init, ScatterEstimate):
        init = ScatterEstimate.from_matrix(init)
    if init.D != D:
        raise ValueError("initial scatter has the wrong dimension")
    return init.mahalanobis, init.matrix


def ste(X, cfg: SteConfig, truth: Subspace | None = None) -> EstimatorResult:
    """Subspace-constrained Tyler's estimator.

    Each iteration reweights the points by their inverse Mahalanobis norm under
    the previous estimate, keeps the top ``d`` eigenpairs of the weighted
    covariance, replaces the remaining eigenvalues by ``gamma`` times their
    mean, and renormalizes to trace one.
    """
    X = _drop_zero_columns(as_data_matrix(X))
    D, N = X.shape
    _check_dims(X, cfg.d)
    d = cfg.d
    solver = cfg.solver
    if solver == "auto":
        solver = "lanczos" if (D >= 64 and 4 * d <= D) else "dense"

    maha, prev_matrix = _initial_scatter(X, cfg)
    state: _LowRankScatter | None = None
    steps: list[float] = []
    angles: list[float] | None = [] if truth is not None else None
    converged = False
    v0 = np.ones(D) / np.sqrt(D)

    for k in range(1, cfg.max_iters + 1):
        q = maha(X) if state is None else state.mahalanobis(X)
        w = 1.0 / np.maximum(q, cfg.mahalanobis_floor)
        if solver == "dense":
            s, U, trace = _top_eigs_dense(X, w, d)
        else:
            s, U, trace = _top_eigs_lanczos(X, w, d, v0)
            v0 = U.sum(axis=1) + 1.0 / np.sqrt(D)
        s, sigma0 = _shrink_top(s, trace, D, cfg.gamma)
        state = _LowRankScatter(s, U, sigma0)
        cur_matrix = state.matrix()
        step = float(np.linalg.norm(cur_matrix - prev_matrix))
        steps.append(step)
        prev_matrix = cur_matrix
        if angles is not None:
            angles.append(principal_angle(Subspace(U), truth))
        if step < cfg.tol:
            converged = True
            break

    return EstimatorResult(
        subspace=Subspace(state.U),
        scatter=state.to_scatter(),
        iterations=len(steps),
        steps=steps,
        converged=converged,
        angles=angles,
        gamma=cfg.gamma,
        method="ste",
    )


def ste_step(X, sigma, d: int, gamma: float, mahalanobis_floor: float = 1e-15):
    """One dense STE iteration from ``sigma``.

    Returns ``(next_sigma, Z)`` where ``Z`` is the weighted covariance before
    shrinkage.
    """
    X = as_data_matrix(X)
    if not isinstance(sigma, ScatterEstimate):
        sigma = ScatterEstimate.from_matrix(sigma)
    w = 1.0 / np.maximum(sigma.mahalanobis(X), mahalanobis_floor)
    Z = (X * w) @ X.T
    Z = (Z + Z.T) / 2
    spec = sym_evd(Z)
    lam = shrink_spectrum(spec.eigenvalues, d, gamma)
    V = spec.eigenvectors
    return ScatterEstimate((V * lam) @ V.T, Spectrum(lam, V)), Z


def ste_weights(sigma, X, d: int, gamma: float) -> np.ndarray:
    """STE point weights computed from a scatter matrix.

    ``sigma`` is a weighted sample covariance (any symmetric PSD matrix).  With
    eigenpairs (s_j, u_j) and beta = gamma * mean(s_{d+1..D}), the weight of x is
    ``1 / (sum_{j<=d} (x.u_j)^2 / s_j + sum_{j>d} (x.u_j)^2 / beta)``.
    """
    M = sigma.matrix if isinstance(sigma, ScatterEstimate) else np.asarray(sigma, dtype=float)
    spec = sigma.spectrum if isinstance(sigma, ScatterEstimate) else sym_evd(M)
    X = as_data_matrix(X)
    lam = np.maximum(spec.eigenvalues, 0.0)
    beta = gamma * lam[d:].mean()
    floor = EIG_FLOOR * max(lam[0], np.finfo(float).tiny)
    C = spec.eigenvectors.T @ X
    denom = (C[:d] ** 2 / np.maximum(lam[:d, None], floor)).sum(axis=0)
    denom += (C[d:] ** 2).sum(axis=0) / max(beta, floor)
    return 1.0 / denom


def tune_gamma(X, d: int, gammas: Sequence[float] = DEFAULT_GAMMAS, cfg: SteConfig | None = None):
    """Pick gamma by the pooled-median inlier count.

    Runs STE for every gamma, sets a threshold at the median of all point-to-
    subspace distances pooled over the runs, and returns the gamma whose
    subspace has the most points below it (first in ``gammas`` on ties),
    together with the per-gamma results.
    """
    gammas = list(gammas)
    if not gammas:
        raise ValueError("gamma list is empty")
    X = _drop_zero_columns(as_data_matrix(X))
    base = cfg if cfg is not None else SteConfig(d=d)
    base = replace(base, d=d)
    results = [ste(X, replace(base, gamma=g)) for g in gammas]
    dists = [r.subspace.distances(X) for r in results]
    zeta = np.median(np.concatenate(dists))
    counts = [int((dj < zeta).sum()) for dj in dists]
    best = int(np.argmax(counts))
    return gammas[best], results


def ste_tuned(X, d: int, gammas: Sequence[float] = DEFAULT_GAMMAS, cfg: SteConfig | None = None,
              truth: Subspace | None = None) -> EstimatorResult:
    """STE with gamma chosen by :func:`tune_gamma`; returns the winning run."""
    gamma, results = tune_gamma(X, d, gammas, cfg)
    res = results[list(gammas).index(gamma)]
    if truth is not None:
        res.angles = [principal_angle(res.subspace, truth)]
    res.extra["gamma_results"] = results
    return res


# ---------------------------------------------------------------------------
# TME
# ---------------------------------------------------------------------------

def tme_step(X, sigma: ScatterEstimate, mahalanobis_floor: float = 1e-15) -> np.ndarray:
    """One exact Tyler fixed-point step; returns the trace-one matrix."""
    w = 1.0 / np.maximum(sigma.mahalanobis(X), mahalanobis_floor)
    Z = (X * w) @ X.T
    Z = (Z + Z.T) / 2
    return Z / np.trace(Z)


def tme(X, d: int | None = None, max_iters: int = 1000, tol: float = 1e-10,
        mahalanobis_floor: float = 1e-15, truth: Subspace | None = None,
        patience: int = 50) -> EstimatorResult:
    """Tyler's M-estimator by fixed-point iteration from I/D.

    Convergence to a unique solution is guaranteed when every d-subspace holds
    fewer than N d / D points; this is not checked.  If the step size fails to
    improve on its best value for ``patience`` consecutive iterations the run
    is flagged non-converged and the best iterate is returned.
    """
    X = _drop_zero_columns(as_data_matrix(X))
    D, N = X.shape
    if d is not None:
        _check_dims(X, d)
    sigma = ScatterEstimate(np.eye(D) / D, Spectrum(np.full(D, 1.0 / D), np.eye(D)))
    steps: list[float] = []
    angles: list[float] | None = [] if (truth is not None and d is not None) else None
    best, best_step, stall = sigma, np.inf, 0
    converged = False
    for _ in range(max_iters):
        nxt = ScatterEstimate.from_matrix(tme_step(X, sigma, mahalanobis_floor), normalize=False)
        step = float(np.linalg.norm(nxt.matrix - sigma.matrix))
        steps.append(step)
        sigma = nxt
        if angles is not None:
            angles.append(principal_angle(sigma.top_subspace(d), truth))
        if step < best_step:
            best, best_step, stall = sigma, step, 0
        else:
            stall += 1
        if step < tol:
            converged = True
            break
        if stall >= patience:
            sigma = best
            break
    return EstimatorResult(
        subspace=sigma.top_subspace(d) if d is not None else None,
        scatter=sigma,
        iterations=len(steps),
        steps=steps,
        converged=converged,
        angles=angles,
        method="tme",
    )


# ---------------------------------------------------------------------------
# FMS / SFMS
# ---------------------------------------------------------------------------

def _top_subspace_of(C: np.ndarray, d: int) -> Subspace:
    return Subspace(sym_evd((C + C.T) / 2).eigenvectors[:, :d])


def fms(X, d: int, p: float = 1.0, delta: float = 1e-10, spherical: bool = False,
        max_iters: int = 100, tol: float = 1e-10, truth: Subspace | None = None) -> EstimatorResult:
    """Fast median subspace: IRLS for the l_p sum of point-to-subspace distances.

    Starts from the PCA subspace; the weight of a point at squared distance
    r2 is ``max(r2, delta) ** (-(2 - p) / 2)``.  ``spherical=True`` projects
    every point to the unit sphere first (SFMS).
    """
    if not 0 <= p < 2:
        raise ValueError(f"p must satisfy 0 <= p < 2, got {p}")
    X = _drop_zero_columns(as_data_matrix(X))
    _check_dims(X, d)
    if spherical:
        X = X / np.linalg.norm(X, axis=0)
    L = _top_subspace_of(X @ X.T, d)
    steps: list[float] = []
    angles: list[float] | None = [] if truth is not None else None
    converged = False
    for _ in range(max_iters):
        r2 = L.distances(X) ** 2
        w = np.maximum(r2, delta) ** (-(2 - p) / 2)
        L_new = _top_subspace_of((X * w) @ X.T, d)
        change = principal_angle(L_new, L)
        L = L_new
        steps.append(change)
        if angles is not None:
            angles.append(principal_angle(L, truth))
        if change < tol:
            converged = True
            break
    return EstimatorResult(L, None, len(steps), steps, converged, angles,
                           method="sfms" if spherical else "fms")


# ---------------------------------------------------------------------------
# RANSAC
# ---------------------------------------------------------------------------

def ransac_budget(inlier_ratio: float, d: int, confidence: float = 0.99) -> float:
    """Expected iterations log(1 - confidence) / log(1 - eps^d), at least one."""
    if inlier_ratio >= 1:
        return 1
    if inlier_ratio <= 0:
        return math.inf
    p_good = inlier_ratio**d
    denom = math.log1p(-p_good)
    if denom == 0:
        return math.inf
    return max(1, math.ceil(math.log(1 - confidence) / denom))


def ransac_subspace(X, cfg: RansacConfig, truth: Subspace | None = None) -> EstimatorResult:
    """Consensus search over d-point samples with an adaptive iteration budget."""
    X = as_data_matrix(X)
    D, N = X.shape
    d = cfg.d
    _check_dims(X, d)
    if N <= d:
        raise ValueError(f"need more than d={d} points, got {N}")
    rng = np.random.default_rng(cfg.seed)
    best_mask, best_count = None, -1
    budget: float = cfg.max_iters
    steps: list[float] = []
    it = 0
    while it < budget:
        it += 1
        idx = rng.choice(N, size=d, replace=False)
        U, s, _ = np.linalg.svd(X[:, idx], full_matrices=False)
        if s[-1] <= 1e-12 * max(s[0], np.finfo(float).tiny):
            steps.append(best_count / N if best_count >= 0 else 0.0)
            continue
        R = X - U @ (U.T @ X)
        mask = np.einsum("ij,ij->j", R, R) < cfg.inlier_threshold**2
        count = int(mask.sum())
        if count > best_count:
            best_mask, best_count = mask, count
            budget = min(cfg.max_iters, ransac_budget(count / N, d, cfg.confidence))
        steps.append(best_count / N)
    if best_mask is None:
        raise RuntimeError("no non-degenerate sample found")
    Xin = X[:, best_mask] if best_count >= d else X
    U = np.linalg.svd(Xin, full_matrices=False)[0][:, :d]
    L = Subspace(_fix_signs(U))
    angles = [principal_angle(L, truth)] if truth is not None else None
    return EstimatorResult(L, None, it, steps, True, angles, inliers=best_mask, method="ransac")


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def fit_subspace(X, d: int, method: str, *, gamma: float | None = None,
                 gammas: Sequence[float] = DEFAULT_GAMMAS, init="identity",
                 max_iters: int | None = None, tol: float | None = None, p: float = 1.0,
                 inlier_threshold: float = 1e-6, confidence: float = 0.99, seed: int = 0,
                 truth: Subspace | None = None) -> EstimatorResult:
    """Run one of :data:`METHODS` with common keyword arguments.

    For ``"ste"``, ``gamma=None`` selects gamma from ``gammas`` by
    :func:`tune_gamma`.
    """
    method = method.lower()
    if method == "ste":
        kw = {}
        if max_iters is not None:
            kw["max_iters"] = max_iters
        if tol is not None:
            kw["tol"] = tol
        cfg = SteConfig(d=d, gamma=gamma if gamma is not None else 0.5, init=init, **kw)
        if gamma is None:
            return ste_tuned(X, d, gammas, cfg, truth=truth)
        return ste(X, cfg, truth=truth)
    if method == "tme":
        return tme(X, d, max_iters=max_iters or 1000, tol=tol or 1e-10, truth=truth)
    if method in ("fms", "sfms"):
        return fms(X, d, p=p, spherical=(method == "sfms"), max_iters=max_iters or 100,
                   tol=tol or 1e-10, truth=truth)
    if method == "ransac":
        cfg = RansacConfig(d=d, inlier_threshold=inlier_threshold, max_iters=max_iters or 1000,
                           confidence=confidence, seed=seed)
        return ransac_subspace(X, cfg, truth=truth)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
