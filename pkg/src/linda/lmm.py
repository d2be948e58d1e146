"""
Random-intercept linear mixed models fitted to every taxon at once.

Model per taxon: ``y = X beta + b_g + e`` with ``b_g ~ N(0, tau2)`` and
``e ~ N(0, sigma2)``. With ``lam = tau2 / sigma2`` the marginal covariance is
``sigma2 * H`` where ``H = I + lam * G G^T`` is block diagonal, so ``H^{-1/2}``
is a per-group partial demeaning and the REML criterion, profiled over
sigma2, reduces to group sums.

The profile is maximized over ``log(lam)`` in [-12, 12] by a coarse grid
followed by golden-section search, vectorized across taxa, and compared
against the ``lam = 0`` boundary.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .data_io import DesignMatrix
from .errors import ValidationError
from .ols import compute_design_summary, fit_ols_all

log = logging.getLogger(__name__)

LOG_LAM_BOUNDS = (-12.0, 12.0)
TOL = 1e-8
MAX_ITER = 200
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
_CHUNK = 1024


@dataclass(frozen=True)
class LmmFits:
    alpha_tilde: np.ndarray
    beta_tilde: np.ndarray
    sigma2_resid: np.ndarray
    tau2_group: np.ndarray
    lam: np.ndarray
    se_alpha: np.ndarray
    df: np.ndarray
    degenerate: np.ndarray
    converged: np.ndarray
    n_groups: int
    fallback_ols: bool = False

    def __len__(self):
        return len(self.alpha_tilde)


@dataclass(frozen=True)
class _Groups:
    codes: np.ndarray
    sizes: np.ndarray
    labels: np.ndarray

    @classmethod
    def from_labels(cls, groups):
        labels, codes = np.unique(np.asarray(groups), return_inverse=True)
        return cls(codes, np.bincount(codes).astype(float), labels)

    def sums(self, A):
        """Group sums along the last axis of A."""
        ind = sparse.csr_matrix(
            (np.ones(len(self.codes)), (np.arange(len(self.codes)), self.codes)),
            shape=(len(self.codes), len(self.sizes)))
        return np.asarray((ind.T @ np.asarray(A).T).T)


class _Profile:
    """Sufficient statistics for evaluating the REML profile of many taxa."""

    def __init__(self, W, X, grp: _Groups):
        self.n, self.p = X.shape
        self.grp = grp
        ng = grp.sizes
        self.ng = ng
        self.XtX = X.T @ X
        xbar = grp.sums(X.T).T / ng[:, None]                    # (G, p)
        self.xbar = xbar
        self.xx_g = ng[:, None, None] * xbar[:, :, None] * xbar[:, None, :]   # (G, p, p)
        self.Xty = W @ X                                        # (m, p)
        ybar = grp.sums(W) / ng                                 # (m, G)
        self.ybar = ybar
        self.yy = np.einsum("ij,ij->i", W, W)

    def normal_equations(self, lam, rows=slice(None)):
        """A = X' H^-1 X, b = X' H^-1 y, c = y' H^-1 y for per-taxon lam."""
        lam = np.asarray(lam, dtype=float)
        cg = lam[:, None] * self.ng[None, :] / (1.0 + lam[:, None] * self.ng[None, :])
        A = self.XtX[None] - np.einsum("mg,gpq->mpq", cg, self.xx_g)
        wy = cg * self.ng[None, :] * self.ybar[rows]
        b = self.Xty[rows] - wy @ self.xbar
        c = self.yy[rows] - np.einsum("mg,mg->m", wy, self.ybar[rows])
        return A, b, c

    def loglik(self, lam, rows=slice(None)):
        """Restricted log-likelihood with sigma2 profiled out."""
        lam = np.asarray(lam, dtype=float)
        A, b, c = self.normal_equations(lam, rows)
        beta = np.linalg.solve(A, b[..., None])[..., 0]
        rss = np.maximum(c - np.einsum("mp,mp->m", b, beta), 1e-300)
        _, logdetA = np.linalg.slogdet(A)
        logdetH = np.log1p(lam[:, None] * self.ng[None, :]).sum(axis=1)
        k = self.n - self.p
        return -0.5 * (k * np.log(2.0 * np.pi * rss / k) + k + logdetH + logdetA)


def reml_loglik(y, X, groups, lam: float) -> float:
    """Profiled restricted log-likelihood of one response at variance ratio lam."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    prof = _Profile(y, np.asarray(X, dtype=float), _Groups.from_labels(groups))
    return float(prof.loglik(np.array([lam]))[0])


def fit_at_lambda(y, X, groups, lam: float):
    """
    GLS fit of one response at a fixed variance ratio ``lam = tau2 / sigma2``.

    Returns
    -------
    beta : ndarray
    sigma2 : float
        REML residual variance, ``y' P y / (n - p)``.
    se_alpha : float
        Standard error of the first coefficient.
    """
    X = np.asarray(X, dtype=float)
    prof = _Profile(np.atleast_2d(np.asarray(y, dtype=float)), X, _Groups.from_labels(groups))
    A, b, c = prof.normal_equations(np.array([float(lam)]))
    beta = np.linalg.solve(A[0], b[0])
    n, p = X.shape
    sigma2 = max(float(c[0] - b[0] @ beta), 0.0) / (n - p)
    return beta, sigma2, math.sqrt(sigma2 * np.linalg.inv(A[0])[0, 0])


def _golden_max(f, lo, hi):
    """Vectorized golden-section maximization of f over per-row brackets."""
    a, b = lo.copy(), hi.copy()
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    it = 0
    while it < MAX_ITER and np.max(b - a) > TOL:
        left = fc >= fd
        # left rows keep [a, d], the others keep [c, b]
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c, d = (np.where(left, b - _INVPHI * (b - a), d),
                np.where(left, c, a + _INVPHI * (b - a)))
        fc, fd = np.where(left, np.nan, fd), np.where(left, fc, np.nan)
        if left.any():
            fc[left] = f(c, left)
        if (~left).any():
            fd[~left] = f(d, ~left)
        it += 1
    return 0.5 * (a + b), (b - a) <= TOL


def containment_df(n: int, p: int, grp_codes, u) -> int:
    """
    Degrees of freedom for the covariate of interest.

    ``n - G - (p - 2) - 1`` when u varies inside some group, else
    ``G - p``, where p = d + 2 and G is the number of groups.
    """
    codes = np.asarray(grp_codes)
    G = int(codes.max()) + 1
    d = p - 2
    u = np.asarray(u, dtype=float)
    lo = np.full(G, np.inf)
    hi = np.full(G, -np.inf)
    np.minimum.at(lo, codes, u)
    np.maximum.at(hi, codes, u)
    if np.any(hi > lo):
        return n - G - d - 1
    return G - d - 2


def fit_lmm_all(W, Z, groups) -> LmmFits:
    """
    REML random-intercept fit for each row of W.

    Parameters
    ----------
    W : array, shape (m, n)
    Z : DesignMatrix or array, shape (n, d + 2); column 0 is the covariate
        of interest
    groups : sequence of n group labels
    """
    X = Z.Z if isinstance(Z, DesignMatrix) else np.asarray(Z, dtype=float)
    W = np.asarray(W, dtype=float)
    n, p = X.shape
    if W.ndim != 2 or W.shape[1] != n:
        raise ValidationError(f"response has shape {W.shape}; expected (m, {n})")
    if groups is None or len(groups) != n:
        raise ValidationError("one group label per sample is required")
    grp = _Groups.from_labels(groups)
    G = len(grp.sizes)
    m = W.shape[0]

    if G < 2 or grp.sizes.max() < 2:
        log.warning("random intercept not identifiable (%d groups, largest size %d); "
                    "falling back to OLS", G, int(grp.sizes.max()))
        return _from_ols(W, X, G)

    df_pos = containment_df(n, p, grp.codes, X[:, 0])
    if n <= p:
        raise ValidationError(f"need more than {p} samples")
    if df_pos < 1:
        raise ValidationError(
            f"containment degrees of freedom are {df_pos}; too few groups for the design")

    prof = _Profile(W, X, grp)

    def crit(t, mask=None):
        rows = slice(None) if mask is None else mask
        return prof.loglik(np.exp(t), rows)

    # coarse scan picks the bracket, golden section refines it
    lo_b, hi_b = LOG_LAM_BOUNDS
    grid = np.linspace(lo_b, hi_b, 25)
    scan = np.column_stack([crit(np.full(m, t)) for t in grid])
    k = np.argmax(scan, axis=1)
    lo = grid[np.maximum(k - 1, 0)]
    hi = grid[np.minimum(k + 1, len(grid) - 1)]

    def crit_masked(t, mask=None):
        if mask is None:
            return crit(t)
        return crit(t[mask], mask)

    t_hat, converged = _golden_max(crit_masked, lo, hi)
    lam = np.exp(t_hat)
    at_zero = prof.loglik(np.zeros(m))
    lam = np.where(at_zero >= prof.loglik(lam), 0.0, lam)

    A, b, _ = prof.normal_equations(lam)
    Ainv = np.linalg.inv(A)
    beta = np.einsum("mpq,mq->mp", Ainv, b)

    # residual sums from explicit residuals, chunked over taxa
    rss = np.empty(m)
    for lo_i in range(0, m, _CHUNK):
        hi_i = min(lo_i + _CHUNK, m)
        r = W[lo_i:hi_i] - beta[lo_i:hi_i] @ X.T
        rbar = grp.sums(r) / grp.sizes
        cg = (lam[lo_i:hi_i, None] * grp.sizes[None, :]
              / (1.0 + lam[lo_i:hi_i, None] * grp.sizes[None, :]))
        rss[lo_i:hi_i] = (np.einsum("ij,ij->i", r, r)
                          - np.einsum("mg,mg->m", cg, grp.sizes[None, :] * rbar ** 2))
    rss = np.maximum(rss, 0.0)
    sigma2 = rss / (n - p)
    se = np.sqrt(sigma2 * Ainv[:, 0, 0])
    msq = prof.yy / n
    degenerate = (sigma2 < 1e-12 * msq + 1e-300) | ~converged | ~np.isfinite(se)
    # a zero random-intercept variance collapses the model to OLS
    df = np.where(lam == 0.0, n - p, df_pos).astype(float)
    return LmmFits(beta[:, 0].copy(), beta[:, 1:].copy(), sigma2, lam * sigma2, lam,
                   se, df, degenerate, converged, G)


def _from_ols(W, X, G) -> LmmFits:
    summary = compute_design_summary(X)
    fits = fit_ols_all(W, X, summary)
    m, n = W.shape
    se = np.sqrt(summary.rho_hat * fits.sigma2_hat / n)
    zeros = np.zeros(m)
    return LmmFits(fits.alpha_tilde, fits.beta_tilde, fits.sigma2_hat, zeros, zeros, se,
                   np.full(m, float(fits.df)), fits.degenerate, np.ones(m, dtype=bool),
                   G, fallback_ols=True)
