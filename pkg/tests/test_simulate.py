import numpy as np
import pytest

from linda.errors import ValidationError
from linda.simulate import (DESIGNS, MU_GRID, SETTINGS, SimConfig, config_params, effect_size,
                            gen_covariates, gen_truth, load_params, make_default_params,
                            run_replications, sample_counts, sample_libsizes, score,
                            simulate_dataset)


def test_config_validation():
    with pytest.raises(ValidationError):
        SimConfig(setting="S9")
    with pytest.raises(ValidationError):
        SimConfig(setting="S8.1", covariate_design="C1")
    with pytest.raises(ValidationError):
        SimConfig(mu_index=7)
    with pytest.raises(ValidationError):
        SimConfig(setting="S6", covariate_design="C1")
    assert SimConfig(mu_index=6).mu == 2.0 and SimConfig(mu_index=1).mu == 1.05


def test_default_params(rng):
    p = make_default_params(400, seed=3)
    assert np.all((p.sigma2 >= 0.1) & (p.sigma2 <= 20)) and np.all(p.sigma2 > 0)
    q = make_default_params(400, seed=3)
    assert np.array_equal(p.beta0, q.beta0) and np.array_equal(p.sigma2, q.sigma2)
    assert p.confounder_coefs.shape == (400, 2)


def test_param_file(tmp_path):
    path = tmp_path / "params.tsv"
    path.write_text("beta0\tsigma2\n0.5\t1.0\n-1.0\t2.0\n0.0\t0.5\n")
    p = load_params(path, seed=1)
    np.testing.assert_array_equal(p.beta0, [0.5, -1.0, 0.0])
    np.testing.assert_array_equal(p.sigma2, [1.0, 2.0, 0.5])
    cfg = SimConfig(m=2, n=10, param_source=str(path))
    assert len(config_params(cfg).beta0) == 2
    with pytest.raises(ValidationError):
        config_params(SimConfig(m=5, n=10, param_source=str(path)))
    bad = tmp_path / "bad.tsv"
    bad.write_text("beta0\tsigma2\n0.5\t-1.0\n")
    with pytest.raises(ValidationError):
        load_params(bad, seed=1)


def test_multinomial_totals(rng):
    X = rng.lognormal(size=(30, 12))
    N = rng.integers(100, 5000, 12)
    Y = sample_counts(X, N, rng)
    np.testing.assert_array_equal(Y.sum(axis=0), N)
    with pytest.raises(ValidationError):
        sample_counts(np.zeros((3, 2)), [10, 10], rng)


def test_binomial_split_moment(rng):
    Y = sample_counts(np.ones((2, 10_000)), np.full(10_000, 50), rng)
    assert abs(Y[0].sum() / Y.sum() - 0.5) < 0.01


def test_library_size_moments(rng):
    N = sample_libsizes("S0", np.zeros(10_000), rng)
    assert abs(N.mean() - 7645) < 100
    var = 7645 + 7645 ** 2 / 5.3
    assert abs(N.var() / var - 1) < 0.1
    assert N.min() >= 50


def test_confounded_library_sizes(rng):
    u = np.repeat([0.0, 1.0], 2000)
    N = sample_libsizes("S6", u, rng)
    ratio = N[u == 1].mean() / N[u == 0].mean()
    assert 9 < ratio < 11


@pytest.mark.parametrize("design", DESIGNS)
def test_covariate_designs(design, rng):
    u, C = gen_covariates(design, 400, rng)
    assert u.shape == (400,)
    if design == "C0":
        assert C is None and set(np.unique(u)) == {0.0, 1.0}
    elif design == "C1":
        assert C is None and len(np.unique(u)) == 400
    else:
        assert C.shape == (400, 2)


def test_effect_sizes():
    pi = np.array([0.0001, 0.001, 0.01, 0.1])
    a50 = effect_size(2.0, pi, 50)
    np.testing.assert_allclose(a50[2:], np.log(4.0))
    assert a50[1] == pytest.approx(np.log(4.0 * 5 ** (1 / 3)))
    assert a50[0] > a50[1] > a50[2]
    np.testing.assert_allclose(effect_size(2.0, pi, 200)[2:], np.log(2.0))
    assert effect_size(1.0, np.array([0.2]), 200)[0] == 0.0
    assert np.all(effect_size(MU_GRID[-1], pi, 50) > effect_size(MU_GRID[0], pi, 50))


def test_block_correlation_target():
    from linda.simulate import _block_correlated_normal
    eps = _block_correlated_normal(100, 5000, np.random.default_rng(8))
    R = np.corrcoef(eps[:4])
    # first block holds taxa 0..3: sub-blocks {0, 1} and {2, 3}
    assert R[0, 1] == pytest.approx(0.5, abs=0.05)
    assert R[2, 3] == pytest.approx(0.5, abs=0.05)
    assert R[0, 2] == pytest.approx(-0.5, abs=0.05)
    assert abs(np.corrcoef(eps[0], eps[10])[0, 1]) < 0.05


def test_nb_draw_moments(rng):
    from linda.simulate import _nb_draw
    x = _nb_draw(rng, np.full(20_000, 40.0), 2.0)
    assert x.mean() == pytest.approx(40, rel=0.03)
    assert x.var() == pytest.approx(40 + 40 ** 2 / 2, rel=0.1)
    assert np.all(_nb_draw(rng, np.full(100, 1e4), 1e-9) >= 0)


def test_truth_invariant(rng):
    pi = rng.dirichlet(np.ones(500))
    t = gen_truth(pi, 0.2, 1.5, 50, rng)
    assert np.array_equal(t.alpha != 0, t.H)
    assert np.all(t.alpha[t.H] > 0)
    mixed = gen_truth(pi, 0.5, 1.5, 50, np.random.default_rng(2), mixed_signs=True)
    assert (mixed.alpha > 0).any() and (mixed.alpha < 0).any()


def test_score_conventions():
    assert score([False, False], [False, False]) == (0.0, 0.0)
    assert score([True, True, False], [True, False, True]) == (0.5, 0.5)


@pytest.mark.parametrize("setting", SETTINGS)
def test_every_setting_generates(setting):
    n = 50
    cfg = SimConfig(setting=setting, m=120, n=n, gamma=0.1)
    data = simulate_dataset(cfg, config_params(cfg), np.random.default_rng(5))
    assert data.counts.shape == (120, n)
    assert data.counts.dtype.kind == "i" and data.counts.min() >= 0
    assert data.counts.sum(axis=0).min() > 0
    if setting.startswith("S8"):
        assert data.groups is not None and len(np.unique(data.groups)) < n


def test_s0_sparsity_in_realistic_range():
    cfg = SimConfig(m=500, n=50)
    params = config_params(cfg)
    zeros = [(simulate_dataset(cfg, params, np.random.default_rng(s)).counts == 0).mean()
             for s in range(5)]
    assert 0.55 <= np.mean(zeros) <= 0.80


def test_replications_deterministic():
    cfg = SimConfig(m=80, n=20, replicates=4, seed=11, gamma=0.2)
    a = run_replications(cfg)
    b = run_replications(cfg)
    assert np.array_equal(a.fdp, b.fdp) and np.array_equal(a.tpp, b.tpp)
    assert a.fdr_mean == b.fdr_mean and a.tpr_mean == b.tpr_mean
    assert np.all((a.fdp >= 0) & (a.fdp <= 1)) and np.all((a.tpp >= 0) & (a.tpp <= 1))
    assert len(a.zero_strategies) == 4


def test_replications_independent_of_workers():
    cfg = SimConfig(m=60, n=20, replicates=3, seed=4)
    a = run_replications(cfg, workers=1)
    b = run_replications(cfg, workers=2)
    assert np.array_equal(a.fdp, b.fdp) and np.array_equal(a.tpp, b.tpp)


def test_global_null_tpr_zero():
    met = run_replications(SimConfig(m=60, n=20, gamma=0.0, replicates=3))
    assert met.tpr_mean == 0.0


def test_lmm_requires_grouped_setting():
    with pytest.raises(ValidationError):
        run_replications(SimConfig(m=30, n=20, replicates=1), method="lmm")
