"""
Synthetic benchmark: generate compositional count data with planted
differential taxa and score the procedure by empirical FDR and power.

Settings
--------
S0    log-normal absolute abundances, NB(7645, 5.3) library sizes
S1    S0 with 30% of abundances forced to zero
S2    S0 with block-correlated log abundances
S3    gamma abundances
S4    m taxa subsampled from a 500-taxon pool, NB(1500, 5.3) library sizes
S5    S0 at small n (effect sizes of the n = 50 branch)
S6    NB(5000, 5.3) vs NB(50000, 5.3) library sizes by group
S7    negative binomial counts
S8.1  paired pre/post samples with a subject random intercept
S8.2  replicate samples per subject with a subject random intercept

Covariate designs: C0 binary u, C1 normal u, C2 binary u driven by two
confounders.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data_io import design_from_arrays
from .errors import LindaError, ValidationError
from .pipeline import run_linda

log = logging.getLogger(__name__)

SETTINGS = ("S0", "S1", "S2", "S3", "S4", "S5", "S6", "S7", "S8.1", "S8.2")
DESIGNS = ("C0", "C1", "C2")
MU_GRID = np.linspace(1.05, 2.0, 6)
NB_SIZE = 5.3
LIBSIZE_MEAN = 7645
LIBSIZE_FLOOR = 50
ZERO_INFLATION = 0.30
GAMMA_OVERDISPERSION = 0.003
LOW_ABUNDANCE = 0.005
S4_POOL = 500
BASELINE_SCALE = 1.6
_POISSON_CAP = 1e15


@dataclass(frozen=True)
class SimConfig:
    setting: str = "S0"
    covariate_design: str = "C0"
    m: int = 500
    n: int = 50
    gamma: float = 0.05
    mu_index: int = 6
    replicates: int = 100
    seed: int = 1
    param_source: str = "synthetic"
    mixed_signs: bool = False

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ValidationError(f"unknown setting {self.setting!r}")
        if self.covariate_design not in DESIGNS:
            raise ValidationError(f"unknown covariate design {self.covariate_design!r}")
        if self.setting.startswith("S8") and self.covariate_design != "C0":
            raise ValidationError("S8 settings use the C0 covariate design")
        if self.setting == "S6" and self.covariate_design == "C1":
            raise ValidationError("S6 needs a binary covariate (C0 or C2)")
        if not 1 <= self.mu_index <= len(MU_GRID):
            raise ValidationError("mu_index must be in 1..6")
        if not 0 <= self.gamma <= 1:
            raise ValidationError("gamma must lie in [0, 1]")
        if self.m < 2 or self.n < 4:
            raise ValidationError("need m >= 2 and n >= 4")
        if self.setting == "S8.1" and self.n % 2:
            raise ValidationError("S8.1 needs an even n")
        if self.setting == "S8.2" and self.n % _replicates_per_subject(self.n):
            raise ValidationError("S8.2 needs n divisible by the replicates per subject")

    @property
    def mu(self) -> float:
        return float(MU_GRID[self.mu_index - 1])


@dataclass(frozen=True)
class TaxonParams:
    beta0: np.ndarray
    sigma2: np.ndarray
    confounder_coefs: np.ndarray

    def take(self, idx) -> "TaxonParams":
        return TaxonParams(self.beta0[idx], self.sigma2[idx], self.confounder_coefs[idx])


@dataclass(frozen=True)
class SimTruth:
    H: np.ndarray
    alpha: np.ndarray


@dataclass
class SimData:
    counts: np.ndarray
    u: np.ndarray
    C: np.ndarray | None
    groups: np.ndarray | None
    truth: SimTruth


@dataclass
class SimMetrics:
    fdr_mean: float
    tpr_mean: float
    fdr_ci_halfwidth: float
    fdp: np.ndarray
    tpp: np.ndarray
    failures: int = 0
    n_rejections: np.ndarray = field(default_factory=lambda: np.zeros(0))
    zero_strategies: list = field(default_factory=list)


def _replicates_per_subject(n):
    return 2 if n < 200 else 4


def _truncated_invgamma(rng, size, shape, scale, lo, hi):
    out = np.empty(size)
    todo = np.arange(size)
    while todo.size:
        draw = scale / rng.gamma(shape, 1.0, todo.size)
        ok = (draw >= lo) & (draw <= hi)
        out[todo[ok]] = draw[ok]
        todo = todo[~ok]
    return out


def make_default_params(m: int, seed: int) -> TaxonParams:
    """
    Synthetic stand-in for real-data taxon parameters.

    ``beta0`` is a random permutation of the m evenly spaced quantiles of
    ``1.6 * (E - 1)``, ``E ~ Exp(1)``: a fixed Zipf-like abundance profile
    with a long tail of rare taxa. ``sigma2`` is inverse-gamma (shape 3,
    scale 4) truncated to [0.1, 20]; confounder coefficients are
    ``N((1, 2), I_2)``. At m = 500, n = 50 and NB(7645, 5.3) library sizes
    roughly 70% of the S0 counts are zero.
    """
    if m < 2:
        raise ValidationError("need at least two taxa")
    rng = np.random.default_rng(seed)
    q = (np.arange(m) + 0.5) / m
    beta0 = rng.permutation(BASELINE_SCALE * (-np.log1p(-q) - 1.0))
    sigma2 = _truncated_invgamma(rng, m, 3.0, 4.0, 0.1, 20.0)
    coefs = rng.normal([1.0, 2.0], 1.0, (m, 2))
    return TaxonParams(beta0, sigma2, coefs)


def load_params(path, seed: int) -> TaxonParams:
    """
    Read (beta0, sigma2) pairs from a two-column TSV; one row per taxon.

    A header row is allowed. Confounder coefficients are drawn from ``seed``.
    """
    frame = pd.read_csv(path, sep="\t", header=None, comment="#")
    try:
        vals = frame.iloc[:, -2:].astype(float).to_numpy()
    except ValueError:
        vals = frame.iloc[1:, -2:].astype(float).to_numpy()
    if vals.shape[0] < 2 or np.any(vals[:, 1] <= 0):
        raise ValidationError("parameter file needs >= 2 rows with positive sigma2")
    rng = np.random.default_rng(seed)
    coefs = rng.normal([1.0, 2.0], 1.0, (vals.shape[0], 2))
    return TaxonParams(vals[:, 0], vals[:, 1], coefs)


def gen_covariates(design: str, n: int, rng):
    """
    Draw the covariate of interest and confounders.

    Returns
    -------
    u : ndarray, shape (n,)
    C : ndarray, shape (n, 2), or None
    """
    rng = np.random.default_rng(rng)
    if design == "C0":
        return rng.binomial(1, 0.5, n).astype(float), None
    if design == "C1":
        return rng.standard_normal(n), None
    if design == "C2":
        c1 = rng.choice([-1.0, 1.0], n)
        c2 = rng.standard_normal(n)
        prob = 1.0 / (1.0 + np.exp(-0.5 * c1 - 0.5 * c2))
        return rng.binomial(1, prob).astype(float), np.column_stack([c1, c2])
    raise ValidationError(f"unknown covariate design {design!r}")


def effect_size(mu, pi_bar, n: int):
    """
    Effect of a differential taxon, up-weighted for low baseline abundance.

    ``log(k mu)`` when ``pi_bar > 0.005`` and
    ``log(k mu (0.005 / pi_bar)^(1/3))`` otherwise, with ``k = 1`` for
    ``n == 200`` and ``k = 2`` for every other n.
    """
    pi_bar = np.asarray(pi_bar, dtype=float)
    k = 1.0 if n == 200 else 2.0
    boost = np.where(pi_bar > LOW_ABUNDANCE, 1.0,
                     np.cbrt(LOW_ABUNDANCE / np.maximum(pi_bar, 1e-300)))
    return np.log(k * mu * boost)


def _block_correlated_normal(m, n, rng, n_blocks=25, rho=0.5):
    """Standard normal noise with +rho inside sub-blocks and -rho across them."""
    eps = np.empty((m, n))
    for block in np.array_split(np.arange(m), min(n_blocks, m)):
        b = len(block)
        half = (b + 1) // 2
        sign = np.where(np.arange(b) < half, 1.0, -1.0)
        R = rho * np.outer(sign, sign)
        np.fill_diagonal(R, 1.0)
        L = np.linalg.cholesky(R)
        eps[block] = L @ rng.standard_normal((b, n))
    return eps


def _group_layout(setting, n, rng):
    """Subject labels and u for the mixed-model settings."""
    if setting == "S8.1":
        G = n // 2
        groups = np.repeat(np.arange(G), 2)
        u = np.tile([0.0, 1.0], G)
    else:
        reps = _replicates_per_subject(n)
        G = n // reps
        groups = np.repeat(np.arange(G), reps)
        u = np.repeat(rng.binomial(1, 0.5, G).astype(float), reps)
    return groups, u


def _nb_params(params: TaxonParams):
    """Per-taxon (kappa, size) for the negative binomial setting."""
    w = params.beta0 + params.sigma2 / 2
    pi0 = np.exp(w - w.max())
    pi0 /= pi0.sum()
    kappa = np.log(LIBSIZE_MEAN * pi0) / math.log(LIBSIZE_MEAN)
    size = 1.0 / np.expm1(params.sigma2)
    return kappa, size


def _nb_draw(rng, mean, size):
    """
    NB(mean, size) as a gamma-Poisson mixture.

    numpy's own sampler refuses the tiny sizes that very noisy taxa map to,
    so the mixture is drawn directly with the Poisson rate capped well below
    its overflow limit.
    """
    mean = np.asarray(mean, dtype=float)
    size = np.broadcast_to(size, mean.shape)
    lam = rng.gamma(size, mean / size)
    return rng.poisson(np.minimum(lam, _POISSON_CAP))


def _log_noise(setting, params, n, rng):
    m = len(params.beta0)
    eps = _block_correlated_normal(m, n, rng) if setting == "S2" else rng.standard_normal((m, n))
    return np.sqrt(params.sigma2)[:, None] * eps


def _gamma_shape(params):
    w = params.beta0 + params.sigma2 / 2
    pi0 = np.exp(w - w.max())
    pi0 /= pi0.sum()
    return pi0 * (1.0 / GAMMA_OVERDISPERSION - 1.0)


def baseline_abundance(setting, params: TaxonParams, n: int, rng) -> np.ndarray:
    """Draw covariate-free baseline abundances X0 (taxa x samples)."""
    rng = np.random.default_rng(rng)
    if setting == "S3":
        return rng.gamma(_gamma_shape(params)[:, None], 1.0, (len(params.beta0), n))
    if setting == "S7":
        kappa, size = _nb_params(params)
        mean = np.exp(kappa * math.log(LIBSIZE_MEAN))
        return _nb_draw(rng, np.repeat(mean[:, None], n, axis=1), size[:, None]).astype(float)
    return np.exp(params.beta0[:, None] + _log_noise(setting, params, n, rng))


def mean_proportions(X) -> np.ndarray:
    """Average over samples of each taxon's within-sample proportion."""
    X = np.asarray(X, dtype=float)
    tot = X.sum(axis=0)
    tot[tot == 0] = 1.0
    return (X / tot).mean(axis=1)


def gen_truth(pi_bar, gamma: float, mu: float, n: int, rng, mixed_signs=False) -> SimTruth:
    """Bernoulli(gamma) differential indicators with their effect sizes."""
    rng = np.random.default_rng(rng)
    H = rng.random(len(pi_bar)) < gamma
    alpha = np.where(H, effect_size(mu, pi_bar, n), 0.0)
    if mixed_signs:
        alpha *= rng.choice([-1.0, 1.0], len(alpha))
    # guard the invariant alpha != 0 <=> H (log(k mu) > 0 on the mu grid)
    H = alpha != 0
    return SimTruth(H, alpha)


def gen_abundances(setting, params: TaxonParams, truth: SimTruth, u, C, rng,
                   groups=None) -> np.ndarray:
    """
    Absolute abundances X (taxa x samples) under ``setting``.

    For S7 the returned matrix already holds the observed counts.
    """
    rng = np.random.default_rng(rng)
    if setting not in SETTINGS:
        raise ValidationError(f"unknown setting {setting!r}")
    m, n = len(params.beta0), len(u)
    shift = np.outer(truth.alpha, u)
    if C is not None:
        shift += params.confounder_coefs @ np.asarray(C, dtype=float).T
    if setting == "S3":
        return rng.gamma(_gamma_shape(params)[:, None] * np.exp(shift), 1.0)
    if setting == "S7":
        kappa, size = _nb_params(params)
        N = sample_libsizes(setting, u, rng)
        mean = np.exp(np.outer(kappa, np.log(N)) + shift)
        return _nb_draw(rng, mean, size[:, None]).astype(float)
    logX = params.beta0[:, None] + shift + _log_noise(setting, params, n, rng)
    if setting.startswith("S8"):
        if groups is None:
            raise ValidationError("S8 settings need subject labels")
        codes = np.unique(groups, return_inverse=True)[1]
        G = codes.max() + 1
        tau2 = rng.uniform(0.0, 1.0, m) * params.sigma2
        gamma_ig = np.sqrt(tau2)[:, None] * rng.standard_normal((m, G))
        logX += gamma_ig[:, codes]
    X = np.exp(logX)
    if setting == "S1":
        X[rng.random(X.shape) < ZERO_INFLATION] = 0.0
    return X


def libsize_means(setting, u) -> np.ndarray:
    u = np.asarray(u)
    if setting == "S4":
        return np.full(len(u), 1500.0)
    if setting == "S6":
        return np.where(u > 0.5, 50000.0, 5000.0)
    return np.full(len(u), float(LIBSIZE_MEAN))


def sample_libsizes(setting, u, rng) -> np.ndarray:
    """NB(mean, 5.3) library sizes floored at 50."""
    rng = np.random.default_rng(rng)
    mean = libsize_means(setting, u)
    N = rng.negative_binomial(NB_SIZE, NB_SIZE / (NB_SIZE + mean))
    return np.maximum(N, LIBSIZE_FLOOR)


def sample_counts(X, N, rng) -> np.ndarray:
    """
    Multinomial reads: column s gets ``N[s]`` reads split by X[:, s] / sum.
    """
    rng = np.random.default_rng(rng)
    X = np.asarray(X, dtype=float)
    tot = X.sum(axis=0)
    if np.any(tot <= 0):
        raise ValidationError(f"sample {int(np.argmax(tot <= 0))} has zero total abundance")
    P = (X / tot).T
    return rng.multinomial(np.asarray(N, dtype=np.int64), P).T


def simulate_dataset(config: SimConfig, params: TaxonParams, rng) -> SimData:
    """One synthetic dataset under ``config``."""
    rng = np.random.default_rng(rng)
    n = config.n
    setting = config.setting
    if setting == "S4":
        idx = rng.choice(len(params.beta0), size=min(config.m, len(params.beta0)), replace=False)
        params = params.take(idx)
    groups = None
    if setting.startswith("S8"):
        groups, u = _group_layout(setting, n, rng)
        C = None
    else:
        u, C = gen_covariates(config.covariate_design, n, rng)
    pi_bar = mean_proportions(baseline_abundance(setting, params, n, rng))
    truth = gen_truth(pi_bar, config.gamma, config.mu, n, rng, config.mixed_signs)
    X = gen_abundances(setting, params, truth, u, C, rng, groups)
    if setting == "S7":
        Y = X.astype(np.int64)
    else:
        Y = sample_counts(X, sample_libsizes(setting, u, rng), rng)
    return SimData(Y, u, C, groups, truth)


def config_params(config: SimConfig) -> TaxonParams:
    m = max(config.m, S4_POOL) if config.setting == "S4" else config.m
    if config.param_source == "synthetic":
        return make_default_params(m, config.seed)
    params = load_params(config.param_source, config.seed)
    if config.setting != "S4":
        if len(params.beta0) < config.m:
            raise ValidationError(
                f"parameter file has {len(params.beta0)} taxa, config needs {config.m}")
        params = params.take(np.arange(config.m))
    return params


def score(reject, H):
    """(FDP, TPP) with 1 v (.) denominators."""
    reject = np.asarray(reject, dtype=bool)
    H = np.asarray(H, dtype=bool)
    R = int(reject.sum())
    V = int((reject & ~H).sum())
    TP = R - V
    return V / max(R, 1), TP / max(int(H.sum()), 1)


def _replicate(args):
    config, params, rep, method, zero, bias, q = args
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(rep,)))
    try:
        data = simulate_dataset(config, params, rng)
        design = design_from_arrays(data.u, data.C)
        groups = data.groups if method == "lmm" else None
        res = run_linda(data.counts, design, groups=groups, zero_handling=zero,
                        bias_correction=bias, q=q)
    except (LindaError, np.linalg.LinAlgError) as exc:
        log.debug("replicate %d failed: %s", rep, exc)
        return None
    fdp, tpp = score(res.reject, data.truth.H)
    return fdp, tpp, int(res.reject.sum()), res.meta["zero_strategy"]


def run_replications(config: SimConfig, method: str = "ols", zero: str = "adaptive",
                     bias: bool = True, q: float = 0.05, workers: int | None = 1) -> SimMetrics:
    """
    Generate ``config.replicates`` datasets, analyze each, and average FDP/TPP.

    Replicate ``r`` draws from its own stream ``SeedSequence(seed,
    spawn_key=(r,))`` so results do not depend on ``workers``. Failing
    replicates are counted and left out of the averages.
    """
    if method not in ("ols", "lmm"):
        raise ValidationError(f"unknown method {method!r}")
    if method == "lmm" and not config.setting.startswith("S8"):
        raise ValidationError("the mixed model needs an S8 setting")
    params = config_params(config)
    jobs = [(config, params, r, method, zero, bias, q) for r in range(config.replicates)]
    workers = workers or os.cpu_count() or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_replicate, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        out = [_replicate(j) for j in jobs]
    ok = [o for o in out if o is not None]
    failures = len(out) - len(ok)
    if not ok:
        return SimMetrics(float("nan"), float("nan"), float("nan"),
                          np.zeros(0), np.zeros(0), failures)
    fdp = np.array([o[0] for o in ok])
    tpp = np.array([o[1] for o in ok])
    nrej = np.array([o[2] for o in ok])
    half = 1.96 * fdp.std(ddof=1) / math.sqrt(len(fdp)) if len(fdp) > 1 else float("nan")
    return SimMetrics(float(fdp.mean()), float(tpp.mean()), float(half), fdp, tpp,
                      failures, nrej, [o[3] for o in ok])
