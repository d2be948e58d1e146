import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linda import design_from_arrays, fit_lmm_all, fit_ols_all
from linda.errors import ValidationError
from linda.lmm import containment_df, fit_at_lambda, reml_loglik
from oracles import reml_direct


def _grouped(rng, G=12, k=4, tau=1.0, m=30, paired=True):
    groups = np.repeat(np.arange(G), k)
    n = G * k
    u = np.tile(np.arange(k) % 2, G).astype(float) if paired else \
        np.repeat(np.arange(G) % 2, k).astype(float)
    C = rng.normal(size=(n, 1))
    X = np.column_stack([u, np.ones(n), C])
    W = (rng.normal(0, 1, (m, 3)) @ X.T + tau * rng.normal(size=(m, G))[:, groups]
         + rng.normal(size=(m, n)))
    return W, u, C, groups


def test_profile_matches_dense_evaluation(rng):
    W, u, C, g = _grouped(rng, G=7, k=3, m=3)
    X = np.column_stack([u, np.ones(len(u)), C])
    for y in W:
        for lam in np.exp(rng.uniform(-4, 3, 7)):
            assert reml_loglik(y, X, g, lam) == pytest.approx(reml_direct(y, X, g, lam),
                                                              abs=1e-8)


def test_unbalanced_groups_profile(rng):
    g = np.array([0, 0, 0, 1, 1, 2, 2, 2, 2, 3, 4, 4])
    X = np.column_stack([rng.normal(size=12), np.ones(12)])
    y = rng.normal(size=12) + rng.normal(size=5)[g]
    for lam in [0.0, 0.3, 2.0, 40.0]:
        assert reml_loglik(y, X, g, lam) == pytest.approx(reml_direct(y, X, g, lam), abs=1e-8)


def test_fit_recovers_gls_at_estimate(rng):
    W, u, C, g = _grouped(rng, m=5)
    Z = design_from_arrays(u, C)
    fits = fit_lmm_all(W, Z, g)
    for i in range(5):
        beta, s2, se = fit_at_lambda(W[i], Z.Z, g, fits.lam[i])
        assert fits.alpha_tilde[i] == pytest.approx(beta[0], rel=1e-9, abs=1e-12)
        assert fits.sigma2_resid[i] == pytest.approx(s2, rel=1e-9)
        assert fits.se_alpha[i] == pytest.approx(se, rel=1e-9)
    assert np.all(fits.tau2_group >= 0) and np.all(fits.sigma2_resid >= 0)
    assert fits.converged.all()


def test_lambda_is_profile_maximizer(rng):
    W, u, C, g = _grouped(rng, m=8)
    Z = design_from_arrays(u, C)
    fits = fit_lmm_all(W, Z, g)
    for i in range(8):
        best = reml_loglik(W[i], Z.Z, g, fits.lam[i])
        for lam in [0.0, *np.exp(np.linspace(-6, 4, 60))]:
            assert reml_loglik(W[i], Z.Z, g, lam) <= best + 1e-9


def test_zero_group_variance_reduces_to_ols(rng):
    G, k = 10, 5
    g = np.repeat(np.arange(G), k)
    u = np.tile([0, 1, 0, 1, 1], G).astype(float)
    noise = rng.normal(size=(20, G * k))
    # remove group means so the between-group spread is below its null level
    noise -= np.stack([np.bincount(g, row) / k for row in noise])[:, g]
    W = np.outer(rng.normal(size=20), u) + noise
    Z = design_from_arrays(u)
    lf = fit_lmm_all(W, Z, g)
    of = fit_ols_all(W, Z)
    assert np.all(lf.lam == 0)
    np.testing.assert_allclose(lf.alpha_tilde, of.alpha_tilde, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(lf.sigma2_resid, of.sigma2_hat, rtol=1e-10)
    np.testing.assert_allclose(lf.se_alpha, of.stderr, rtol=1e-10)
    assert np.all(lf.df == of.df)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_negating_covariate(seed):
    r = np.random.default_rng(seed)
    W, u, C, g = _grouped(r, m=6)
    a = fit_lmm_all(W, design_from_arrays(u, C), g)
    b = fit_lmm_all(W, design_from_arrays(-u, C), g)
    np.testing.assert_allclose(b.alpha_tilde, -a.alpha_tilde, rtol=1e-7, atol=1e-9)
    np.testing.assert_allclose(b.sigma2_resid, a.sigma2_resid, rtol=1e-6)
    np.testing.assert_allclose(b.tau2_group, a.tau2_group, rtol=1e-5, atol=1e-9)
    np.testing.assert_allclose(b.se_alpha, a.se_alpha, rtol=1e-6)
    assert np.array_equal(a.df, b.df)


def test_se_shrinks_with_group_variance(rng):
    # group-level covariate, balanced groups: less between-group variance,
    # tighter estimate
    W, u, C, g = _grouped(rng, G=10, k=4, m=1, paired=False)
    X = np.column_stack([u, np.ones(len(u))])
    ses = [fit_at_lambda(W[0], X, g, lam)[2] for lam in [8, 4, 2, 1, .5, .25, .1, .01, 0]]
    assert np.all(np.diff(ses) <= 1e-12)


def test_paired_design_matches_within_pair_differences(rng):
    G = 15
    g = np.repeat(np.arange(G), 2)
    u = np.tile([0.0, 1.0], G)
    W = 0.7 * u + rng.normal(0, 1.5, G)[g] + rng.normal(size=2 * G)
    fits = fit_lmm_all(W[None], design_from_arrays(u), g)
    diff = W[1::2] - W[::2]
    assert fits.alpha_tilde[0] == pytest.approx(diff.mean(), abs=1e-8)


def test_containment_df():
    g = np.repeat(np.arange(5), 4)
    within = np.tile([0, 1, 0, 1], 5)
    between = np.repeat([0, 1, 0, 1, 1], 4)
    assert containment_df(20, 3, g, within) == 20 - 5 - 1 - 1
    assert containment_df(20, 3, g, between) == 5 - 1 - 2


def test_df_reported_per_taxon(rng):
    W, u, C, g = _grouped(rng, m=10)
    fits = fit_lmm_all(W, design_from_arrays(u, C), g)
    n, G, d = len(u), 12, 1
    assert set(np.unique(fits.df)) <= {n - G - d - 1, n - d - 2}


def test_singleton_groups_fall_back(rng, caplog):
    W = rng.normal(size=(4, 10))
    with caplog.at_level(logging.WARNING, logger="linda"):
        fits = fit_lmm_all(W, design_from_arrays(rng.normal(size=10)), np.arange(10))
    assert fits.fallback_ols and "falling back to OLS" in caplog.text


def test_input_validation(rng):
    W = rng.normal(size=(3, 8))
    Z = design_from_arrays(rng.normal(size=8))
    with pytest.raises(ValidationError):
        fit_lmm_all(W, Z, np.arange(5))
    with pytest.raises(ValidationError):
        fit_lmm_all(W[:, :6], Z, np.repeat([0, 1], 4))
