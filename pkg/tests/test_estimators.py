import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ste_rsr.core import ScatterEstimate, Subspace, principal_angle
from ste_rsr.estimators import (
    DEFAULT_GAMMAS, RansacConfig, SteConfig, fit_subspace, fms, ransac_budget, ransac_subspace,
    shrink_spectrum, ste, ste_step, ste_weights, tme, tme_step, tune_gamma,
)
from ste_rsr.synth import HaystackConfig, gen_haystack


def _haystack(D, d, n_in, n_out, seed=0):
    return gen_haystack(HaystackConfig(D=D, d=d, n_in=n_in, n_out=n_out, seed=seed))


# --- independent oracles -------------------------------------------------------

def _oracle_ste_step(X, S, d, gamma):
    """One STE step written out with an explicit inverse."""
    Sinv = np.linalg.inv(S)
    w = 1.0 / np.einsum("ij,ij->j", X, Sinv @ X)
    Z = sum(w[i] * np.outer(X[:, i], X[:, i]) for i in range(X.shape[1]))
    lam, V = np.linalg.eigh(Z)
    lam, V = lam[::-1], V[:, ::-1]
    lam[d:] = gamma * lam[d:].mean()
    out = V @ np.diag(lam) @ V.T
    return out / np.trace(out)


def _random_ste_structured(rng, D, d):
    V = np.linalg.qr(rng.normal(size=(D, D)))[0]
    top = np.sort(rng.uniform(0.5, 2.0, d))[::-1]
    lam = np.concatenate([top, np.full(D - d, rng.uniform(0.01, 0.4))])
    M = (V * lam) @ V.T
    return M / np.trace(M)


# --- STE -------------------------------------------------------------------------

def test_ste_pure_inliers_small():
    sc = _haystack(5, 2, 20, 0, seed=1)
    res = ste(sc.data, SteConfig(d=2, gamma=0.5, max_iters=50))
    assert principal_angle(res.subspace, sc.truth) < 1e-8


def test_ste_step_matches_oracle():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(7, 30))
    S = _random_ste_structured(rng, 7, 3)
    nxt, _ = ste_step(X, S, 3, 0.3)
    assert np.linalg.norm(nxt.matrix - _oracle_ste_step(X, S, 3, 0.3)) < 1e-12


def test_ste_first_iterate_matches_oracle():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(6, 25))
    res = ste(X, SteConfig(d=2, gamma=0.4, max_iters=1))
    assert np.linalg.norm(res.scatter.matrix - _oracle_ste_step(X, np.eye(6) / 6, 2, 0.4)) < 1e-12


def test_ste_eigenvalue_structure_each_iteration():
    X = _haystack(8, 3, 40, 40, seed=2).data
    S = np.eye(8) / 8
    for _ in range(5):
        nxt, Z = ste_step(X, S, 3, 0.25)
        lam = nxt.spectrum.eigenvalues
        assert np.ptp(lam[3:]) < 1e-12
        z = np.linalg.eigvalsh(Z)[::-1]
        top, beta = z[:3], 0.25 * z[3:].mean()
        assert lam[3] == pytest.approx(beta / (top.sum() + 5 * beta), abs=1e-12)
        S = nxt.matrix


def test_ste_scale_invariance():
    X = _haystack(10, 3, 60, 60, seed=3).data
    a = ste(X, SteConfig(d=3, max_iters=20, tol=1e-300))
    b = ste(7.5 * X, SteConfig(d=3, max_iters=20, tol=1e-300))
    assert np.linalg.norm(a.scatter.matrix - b.scatter.matrix) < 1e-12


def test_tme_scale_invariance():
    X = _haystack(6, 2, 50, 50, seed=3).data
    a, b = tme(X, max_iters=30, tol=1e-300), tme(0.01 * X, max_iters=30, tol=1e-300)
    assert np.linalg.norm(a.scatter.matrix - b.scatter.matrix) < 1e-12


def test_ste_determinism():
    X = _haystack(10, 3, 60, 60, seed=4).data
    a, b = ste(X, SteConfig(d=3)), ste(X, SteConfig(d=3))
    np.testing.assert_array_equal(a.scatter.matrix, b.scatter.matrix)
    assert a.steps == b.steps


def test_ste_trace_lengths_and_steps():
    sc = _haystack(10, 3, 60, 60, seed=5)
    res = ste(sc.data, SteConfig(d=3, max_iters=30), truth=sc.truth)
    assert len(res.steps) == res.iterations == len(res.angles)
    assert all(s >= 0 for s in res.steps)


def test_ste_isotropic_gamma_one():
    X = np.random.default_rng(6).normal(size=(4, 100_000))
    res = ste(X, SteConfig(d=2, gamma=1.0, max_iters=100))
    assert np.abs(res.scatter.matrix - np.eye(4) / 4).max() < 1e-2


def test_ste_generalized_haystack_tme_init():
    sc = _haystack(10, 3, 450, 1400, seed=0)
    res = ste(sc.data, SteConfig(d=3, gamma=0.4, init="tme"))
    assert principal_angle(res.subspace, sc.truth) < 1e-6


def test_ste_lanczos_matches_dense():
    sc = _haystack(80, 5, 200, 200, seed=7)
    a = ste(sc.data, SteConfig(d=5, solver="dense", max_iters=15, tol=1e-300))
    b = ste(sc.data, SteConfig(d=5, solver="lanczos", max_iters=15, tol=1e-300))
    assert np.linalg.norm(a.scatter.matrix - b.scatter.matrix) < 1e-9


def test_ste_config_validation():
    with pytest.raises(ValueError):
        SteConfig(d=2, gamma=0.0)
    with pytest.raises(ValueError):
        SteConfig(d=2, gamma=1.5)
    with pytest.raises(ValueError):
        SteConfig(d=2, max_iters=0)
    with pytest.raises(ValueError):
        ste(np.ones((3, 5)), SteConfig(d=3))


def test_ste_drops_zero_columns():
    sc = _haystack(5, 2, 20, 0, seed=1)
    X = np.hstack([sc.data, np.zeros((5, 2))])
    with pytest.warns(RuntimeWarning, match="zero column"):
        res = ste(X, SteConfig(d=2))
    assert principal_angle(res.subspace, sc.truth) < 1e-8


def test_shrink_spectrum():
    out = shrink_spectrum([4.0, 3.0, 2.0, 1.0], 2, 0.5)
    # bottom mean 1.5, shrunk to 0.75; total 4 + 3 + 1.5 = 8.5
    np.testing.assert_allclose(out, np.array([4, 3, 0.75, 0.75]) / 8.5)


# --- weights and fusion ---------------------------------------------------------------

def test_ste_weights_isotropic():
    X = np.random.default_rng(0).normal(size=(5, 12))
    w = ste_weights(np.eye(5) / 5, X, 2, 1.0)
    np.testing.assert_allclose(w, (1 / 5) / np.sum(X**2, axis=0), rtol=1e-12)


def test_ste_weights_axis_aligned():
    S = np.diag([0.9, 0.05, 0.05])
    w = ste_weights(S, np.array([[1.0], [0.0], [0.0]]), 1, 1.0)
    assert w[0] == pytest.approx(0.9, rel=1e-12)


def _fusion_gap(rng, D, N, d, gamma):
    X = rng.normal(size=(D, N))
    Z = rng.normal(size=(D, D))
    Z = Z @ Z.T
    lam, V = np.linalg.eigh(Z)
    lam, V = lam[::-1], V[:, ::-1]
    sigma = ScatterEstimate.from_matrix((V * shrink_spectrum(lam, d, gamma)) @ V.T)
    expected, _ = ste_step(X, sigma, d, gamma)
    w = ste_weights(Z, X, d, gamma)
    Zw = (X * w) @ X.T
    mu, W = np.linalg.eigh(Zw)
    mu, W = mu[::-1], W[:, ::-1]
    fused = (W * shrink_spectrum(mu, d, gamma)) @ W.T
    return np.linalg.norm(fused - expected.matrix)


def test_fusion_equivalence_fixed():
    assert _fusion_gap(np.random.default_rng(0), 6, 40, 2, 0.3) < 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 12), st.data())
def test_fusion_equivalence_property(D, data):
    d = data.draw(st.integers(1, D - 1))
    N = data.draw(st.integers(D, 60))
    gamma = data.draw(st.floats(0.05, 1.0))
    rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
    assert _fusion_gap(rng, D, N, d, gamma) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_ste_weights_positive(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(6, 20))
    assert np.all(ste_weights(_random_ste_structured(rng, 6, 2), X, 2, 0.5) > 0)


# --- gamma selection ------------------------------------------------------------------

def test_tune_gamma_singleton():
    X = _haystack(6, 2, 30, 30).data
    g, res = tune_gamma(X, 2, [0.5])
    assert g == 0.5 and len(res) == 1


def test_tune_gamma_ties_take_first():
    # pure inliers: every gamma recovers the same subspace
    X = _haystack(6, 2, 30, 0).data
    g, _ = tune_gamma(X, 2, [0.3, 0.2, 0.1])
    assert g == 0.3


def test_tune_gamma_empty():
    with pytest.raises(ValueError):
        tune_gamma(np.ones((3, 5)), 1, [])


def test_tune_gamma_recount():
    sc = _haystack(10, 3, 160, 240, seed=11)
    g, results = tune_gamma(sc.data, 3, DEFAULT_GAMMAS)
    # recount with projector-based distances
    dist = []
    for r in results:
        P = r.subspace.basis @ r.subspace.basis.T
        dist.append(np.linalg.norm(sc.data - P @ sc.data, axis=0))
    zeta = np.median(np.concatenate(dist))
    counts = [int(np.sum(x < zeta)) for x in dist]
    assert counts[list(DEFAULT_GAMMAS).index(g)] == max(counts)


# --- TME ------------------------------------------------------------------------------

def test_tme_cross_points():
    X = np.array([[1.0, -1.0, 0.0, 0.0], [0.0, 0.0, 1.0, -1.0]])
    np.testing.assert_allclose(tme(X).scatter.matrix, np.eye(2) / 2, atol=1e-12)


def test_tme_shape_matrix():
    rng = np.random.default_rng(0)
    X = np.sqrt(np.array([[4.0], [1.0]]) / 2) * rng.normal(size=(2, 100_000))
    S = tme(X).scatter.matrix
    expected = np.diag([0.8, 0.2])
    assert np.abs(S - expected).max() / 0.8 < 0.03


def test_tme_fixed_point_residual():
    X = np.random.default_rng(1).normal(size=(5, 200))
    res = tme(X, tol=1e-12)
    assert res.converged
    assert np.linalg.norm(tme_step(X, res.scatter) - res.scatter.matrix) < 1e-8


def test_tme_fails_with_cross_block():
    from ste_rsr.synth import anisotropic_outlier_cov
    base = _haystack(10, 3, 1, 0, seed=0)
    cov = anisotropic_outlier_cov(base.truth, 0.5)
    angs = []
    for seed in range(5):
        sc = gen_haystack(HaystackConfig(D=10, d=3, n_in=450, n_out=1400, sigma_out=cov, seed=seed,
                                         planted_basis=base.truth))
        angs.append(principal_angle(tme(sc.data, 3).subspace, sc.truth))
    assert np.median(angs) > 0.05


# --- FMS ------------------------------------------------------------------------------

@pytest.mark.parametrize("spherical", [False, True])
def test_fms_pure_inliers(spherical):
    sc = _haystack(8, 3, 50, 0, seed=2)
    res = fms(sc.data, 3, spherical=spherical)
    assert principal_angle(res.subspace, sc.truth) < 1e-8
    assert res.iterations <= 3


def test_fms_rejects_p2():
    with pytest.raises(ValueError):
        fms(np.ones((3, 5)), 1, p=2)


def test_fms_p_near_two_is_pca():
    X = np.random.default_rng(3).normal(size=(6, 80)) * np.arange(1, 7)[:, None]
    res = fms(X, 2, p=2 - 1e-12)
    pca = Subspace(np.linalg.svd(X)[0][:, :2])
    assert principal_angle(res.subspace, pca) < 1e-6


def test_fms_half_outliers():
    sc = _haystack(10, 3, 200, 200, seed=4)
    assert principal_angle(fms(sc.data, 3).subspace, sc.truth) < 1e-3


# --- RANSAC ----------------------------------------------------------------------------

def test_ransac_budget_formula():
    assert ransac_budget(0.5, 8, 0.99) == math.ceil(math.log(0.01) / math.log(1 - 0.5**8)) == 1177
    assert ransac_budget(1.0, 8) == 1


def test_ransac_pure_inliers_single_iteration():
    sc = _haystack(9, 8, 100, 0, seed=1)
    res = ransac_subspace(sc.data, RansacConfig(d=8, inlier_threshold=1e-6))
    assert res.iterations == 1
    assert principal_angle(res.subspace, sc.truth) < 1e-8


def test_ransac_thirty_percent():
    sc = _haystack(9, 8, 280, 120, seed=2)
    res = ransac_subspace(sc.data, RansacConfig(d=8, inlier_threshold=0.05, max_iters=1000))
    assert res.iterations <= 1000
    assert principal_angle(res.subspace, sc.truth) < 1e-2


def test_ransac_deterministic():
    sc = _haystack(9, 8, 280, 120, seed=2)
    cfg = RansacConfig(d=8, inlier_threshold=0.05, seed=5)
    a, b = ransac_subspace(sc.data, cfg), ransac_subspace(sc.data, cfg)
    np.testing.assert_array_equal(a.subspace.basis, b.subspace.basis)


def test_ransac_config_validation():
    with pytest.raises(ValueError):
        RansacConfig(d=2, inlier_threshold=0.1, confidence=1.0)


# --- dispatch ----------------------------------------------------------------------------

@pytest.mark.parametrize("method", ["ste", "tme", "fms", "sfms", "ransac"])
def test_fit_subspace_all_methods(method):
    sc = _haystack(10, 3, 200, 0, seed=8)
    res = fit_subspace(sc.data, 3, method, truth=sc.truth)
    assert principal_angle(res.subspace, sc.truth) < 1e-6


def test_fit_subspace_unknown():
    with pytest.raises(ValueError, match="unknown method"):
        fit_subspace(np.ones((3, 5)), 1, "pca")
