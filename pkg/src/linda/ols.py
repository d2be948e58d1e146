"""
Per-taxon least squares on CLR data.

All taxa share one design, so Z is factorized once (QR) and every taxon's
coefficients come from a single triangular solve against ``Q^T W^T``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .data_io import DesignMatrix
from .errors import DesignError, IllConditionedDesign, ValidationError

MAX_CONDITION = 1e12
_CHUNK = 2048


@dataclass(frozen=True)
class DesignSummary:
    gram_inverse: np.ndarray
    rho_hat: float
    Q: np.ndarray
    R: np.ndarray


@dataclass(frozen=True)
class TaxonFit:
    alpha_tilde: float
    beta_tilde: np.ndarray
    sigma2_hat: float
    df: float
    degenerate: bool


@dataclass(frozen=True)
class OlsFits:
    """Struct-of-arrays view of m TaxonFit records."""

    alpha_tilde: np.ndarray
    beta_tilde: np.ndarray
    sigma2_hat: np.ndarray
    df: int
    degenerate: np.ndarray
    summary: DesignSummary

    def __len__(self):
        return len(self.alpha_tilde)

    def __getitem__(self, i) -> TaxonFit:
        return TaxonFit(float(self.alpha_tilde[i]), self.beta_tilde[i],
                        float(self.sigma2_hat[i]), self.df, bool(self.degenerate[i]))

    @property
    def stderr(self) -> np.ndarray:
        n = self.summary.Q.shape[0]
        return np.sqrt(self.summary.rho_hat * self.sigma2_hat / n)


def _as_Z(Z):
    return Z.Z if isinstance(Z, DesignMatrix) else np.asarray(Z, dtype=float)


def compute_design_summary(Z) -> DesignSummary:
    """
    QR-factorize the design and return ``(Z^T Z / n)^{-1}`` and its (1,1)
    entry rho_hat.
    """
    Z = _as_Z(Z)
    n, p = Z.shape
    if n <= p:
        raise DesignError(f"need n > {p} samples, got {n}")
    Q, R = np.linalg.qr(Z)
    sv = np.linalg.svd(R, compute_uv=False)
    tol = sv[0] * max(n, p) * np.finfo(float).eps
    if sv[-1] <= tol:
        raise DesignError("design matrix is rank deficient")
    cond = sv[0] / sv[-1]
    if cond > MAX_CONDITION:
        raise IllConditionedDesign(f"design condition number {cond:.3g} exceeds {MAX_CONDITION:g}")
    Rinv = linalg.solve_triangular(R, np.eye(p))
    gram_inverse = n * (Rinv @ Rinv.T)
    gram_inverse = 0.5 * (gram_inverse + gram_inverse.T)
    return DesignSummary(gram_inverse, float(gram_inverse[0, 0]), Q, R)


def fit_ols_all(W, Z, summary: DesignSummary | None = None,
                threads: int = 1) -> OlsFits:
    """
    Regress every row of ``W`` (taxa x samples) on the design.

    Parameters
    ----------
    W : array, shape (m, n)
    Z : DesignMatrix or array, shape (n, d + 2)
    summary : DesignSummary, optional
        Reused when the same design is fitted repeatedly.
    threads : int
        Worker threads for the residual pass over taxa chunks.

    Returns
    -------
    OlsFits
    """
    Zm = _as_Z(Z)
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[1] != Zm.shape[0]:
        raise ValidationError(
            f"response has shape {W.shape}; expected (m, {Zm.shape[0]})")
    if summary is None:
        summary = compute_design_summary(Zm)
    n, p = Zm.shape
    df = n - p
    m = W.shape[0]

    # theta = R^{-1} Q^T W^T, shape (p, m)
    theta = linalg.solve_triangular(summary.R, summary.Q.T @ W.T)
    rss = np.empty(m)
    msq = np.empty(m)

    def _residuals(lo):
        hi = min(lo + _CHUNK, m)
        block = W[lo:hi]
        resid = block - theta[:, lo:hi].T @ Zm.T
        rss[lo:hi] = np.einsum("ij,ij->i", resid, resid)
        msq[lo:hi] = np.einsum("ij,ij->i", block, block) / n

    starts = range(0, m, _CHUNK)
    if threads > 1 and m > _CHUNK:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(_residuals, starts))
    else:
        for lo in starts:
            _residuals(lo)

    sigma2 = rss / df
    degenerate = sigma2 < 1e-12 * msq + 1e-300
    return OlsFits(theta[0].copy(), theta[1:].T.copy(), sigma2, df, degenerate, summary)
