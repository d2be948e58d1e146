"""Zero handling and the centered log-ratio transform."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data_io import CountTable, DesignMatrix
from .errors import ValidationError

PSEUDO_COUNT = 0.5
ADAPTIVE_THRESHOLD = 0.1
ZERO_STRATEGIES = ("pseudo", "imputation", "adaptive")


@dataclass(frozen=True)
class PositiveAbundance:
    """Strictly positive abundances ready for log transformation."""

    values: np.ndarray
    zero_strategy: str
    libsize_p: float | None = None


def _counts_array(counts):
    return counts.counts if isinstance(counts, CountTable) else np.asarray(counts)


def library_sizes(counts) -> np.ndarray:
    """Column sums N_s of a taxa x samples count matrix."""
    N = _counts_array(counts).sum(axis=0)
    empty = np.flatnonzero(N == 0)
    if len(empty):
        raise ValidationError(f"sample at column {empty[0]} has zero total count")
    return N


def libsize_association_test(N, design) -> float:
    """
    Overall F-test p-value of log library size on the design's non-intercept
    columns.

    Returns 1.0 when log(N) does not vary and 0.0 when the design explains it
    perfectly.
    """
    Z = design.Z if isinstance(design, DesignMatrix) else np.asarray(design, dtype=float)
    y = np.log(np.asarray(N, dtype=float))
    n, p = Z.shape
    if n <= p:
        raise ValidationError(f"need more than {p} samples for the library-size test")
    rss0 = float(np.sum((y - y.mean()) ** 2))
    scale = float(np.mean(y ** 2)) + 1e-300
    if rss0 <= 1e-24 * scale:
        return 1.0
    coef, *_ = np.linalg.lstsq(Z, y, rcond=None)
    rss1 = float(np.sum((y - Z @ coef) ** 2))
    if rss1 <= 1e-24 * rss0:
        return 0.0
    df1, df2 = p - 1, n - p
    F = ((rss0 - rss1) / df1) / (rss1 / df2)
    return float(stats.f.sf(F, df1, df2))


def impute_zeros(Y: np.ndarray, N: np.ndarray) -> np.ndarray:
    """
    Replace zeros of taxon i in sample s with N_s / max{N_k : Y_ik = 0}.

    The deepest zero-carrying sample of each taxon therefore receives 1.
    """
    Y = np.asarray(Y)
    N = np.asarray(N, dtype=float)
    zero = Y == 0
    out = Y.astype(float)
    if not zero.any():
        return out
    nmax = np.where(zero, N[None, :], -np.inf).max(axis=1)
    rows, cols = np.nonzero(zero)
    out[rows, cols] = N[cols] / nmax[rows]
    return out


def handle_zeros(counts, strategy: str = "adaptive", design=None,
                 threshold: float = ADAPTIVE_THRESHOLD) -> PositiveAbundance:
    """
    Make counts strictly positive.

    Parameters
    ----------
    counts : CountTable or array
    strategy : {"pseudo", "imputation", "adaptive"}
        ``pseudo`` adds 0.5 everywhere, ``imputation`` scales zeros by library
        size, ``adaptive`` picks imputation when the library sizes associate
        with the design (F-test p below ``threshold``) and pseudo otherwise.
    design : DesignMatrix or array, required for ``adaptive``
    """
    if strategy not in ZERO_STRATEGIES:
        raise ValidationError(f"unknown zero-handling strategy {strategy!r}")
    Y = _counts_array(counts)
    p = None
    if strategy == "adaptive":
        if design is None:
            raise ValidationError("adaptive zero handling needs the design")
        p = libsize_association_test(library_sizes(Y), design)
        strategy = "imputation" if p < threshold else "pseudo"
    if strategy == "pseudo":
        return PositiveAbundance(Y + PSEUDO_COUNT, "pseudo", p)
    return PositiveAbundance(impute_zeros(Y, library_sizes(Y)), "imputation", p)


def clr_transform(X) -> np.ndarray:
    """
    Centered log-ratio transform of each column (sample).

    ``W[i, s] = log X[i, s] - mean_j log X[j, s]``

    Each column is first divided by a power of two midway (in exponent)
    between its extremes. That step is exact in floating point, so rescaling
    a sample by ``2**k`` leaves its output bit-identical.
    """
    values = X.values if isinstance(X, PositiveAbundance) else np.asarray(X, dtype=float)
    if values.size and not np.all(values > 0):
        raise ValidationError("CLR transform needs strictly positive abundances")
    if values.size:
        _, hi = np.frexp(values.max(axis=0, keepdims=True))
        _, lo = np.frexp(values.min(axis=0, keepdims=True))
        values = np.ldexp(values, -((hi + lo) // 2))
    L = np.log(values)
    L -= L.mean(axis=0, keepdims=True)
    return L
