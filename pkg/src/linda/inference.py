"""Studentized statistics, t-tail p-values and FDR control."""

from __future__ import annotations

import numpy as np
from scipy import special

from .errors import ValidationError


def t_statistics(alpha_hat, sigma2, rho_hat: float, n: int, degenerate=None) -> np.ndarray:
    """
    ``T_i = sqrt(n) * alpha_hat_i / sqrt(rho_hat * sigma2_i)``.

    Degenerate taxa (and any with zero variance) get NaN.
    """
    a = np.asarray(alpha_hat, dtype=float)
    s2 = np.asarray(sigma2, dtype=float)
    bad = ~(s2 > 0)
    if degenerate is not None:
        bad |= np.asarray(degenerate, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        T = np.sqrt(n) * a / np.sqrt(rho_hat * s2)
    T[bad] = np.nan
    return T


def p_values(T, df) -> np.ndarray:
    """
    Two-sided t-tail probabilities ``2 F_df(-|T|)``.

    Uses the regularized incomplete beta identity
    ``2 F_df(-|t|) = I_{df / (df + t^2)}(df / 2, 1 / 2)``, switching to the
    complement ``1 - I_{t^2 / (df + t^2)}(1 / 2, df / 2)`` for p above 1/2,
    which stays accurate near ``t = 0`` where ``df / (df + t^2)`` rounds to 1.
    NaN stays NaN.
    """
    T = np.asarray(T, dtype=float)
    df = np.broadcast_to(np.asarray(df, dtype=float), T.shape)
    if np.any(df[np.isfinite(T)] < 1):
        raise ValidationError("degrees of freedom must be >= 1")
    t2 = T * T
    with np.errstate(invalid="ignore"):
        x = np.where(np.isinf(t2), 0.0, df / (df + t2))
        y = np.where(np.isinf(t2), 1.0, t2 / (df + t2))
        p = special.betainc(df / 2.0, 0.5, x)
        p = np.where(p > 0.5, 1.0 - special.betainc(0.5, df / 2.0, y), p)
    return np.clip(p, 0.0, 1.0)


def bh_adjust(p, q: float = 0.05):
    """
    Benjamini-Hochberg step-up adjustment.

    NaN entries are left out of the family and come back as NaN / not
    rejected.

    Returns
    -------
    p_adj : ndarray
    reject : ndarray of bool
    """
    if not 0 < q < 1:
        raise ValidationError("target FDR level must lie in (0, 1)")
    p = np.asarray(p, dtype=float)
    p_adj = np.full(p.shape, np.nan)
    reject = np.zeros(p.shape, dtype=bool)
    idx = np.flatnonzero(~np.isnan(p))
    m = idx.size
    if m == 0:
        return p_adj, reject
    order = idx[np.argsort(p[idx], kind="stable")]
    ranks = np.arange(1, m + 1)
    scaled = (m * p[order]) / ranks
    adj = np.minimum.accumulate(scaled[::-1])[::-1]
    # m * p / m can round below p
    p_adj[order] = np.minimum(np.maximum(adj, p[order]), 1.0)
    # reject by the step-up rule itself, not by thresholding p_adj, so that
    # the rejection set is exact even under floating-point ties
    ok = np.flatnonzero(scaled <= q)
    if ok.size:
        reject[order[:ok[-1] + 1]] = True
    return p_adj, reject


def fdp_threshold(T, df, q: float = 0.05):
    """
    Smallest threshold t* with estimated FDP ``2 m F_df(-t) / #{|T_i| >= t}``
    at most ``q``.

    Candidates are the observed ``|T_i|``; the count uses ``>=`` so that the
    rejection set ``{|T_i| >= t*}`` matches Benjamini-Hochberg exactly.

    Returns
    -------
    t_star : float or None
    reject : ndarray of bool
    """
    if not 0 < q < 1:
        raise ValidationError("target FDR level must lie in (0, 1)")
    T = np.asarray(T, dtype=float)
    reject = np.zeros(T.shape, dtype=bool)
    valid = np.flatnonzero(~np.isnan(T))
    m = valid.size
    if m == 0:
        return None, reject
    absT = np.abs(T[valid])
    # descending |T|: the k-th candidate is exceeded-or-matched by k values
    order = np.argsort(-absT, kind="stable")
    cand = absT[order]
    pk = p_values(cand, df if np.ndim(df) == 0 else np.asarray(df)[valid][order])
    counts = np.arange(1, m + 1)
    fdp = (m * pk) / counts
    ok = np.flatnonzero(fdp <= q)
    if ok.size == 0:
        return None, reject
    k = ok[-1]
    t_star = float(cand[k])
    reject[valid[order[:k + 1]]] = True
    return t_star, reject
