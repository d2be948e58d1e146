"""End-to-end LinDA: zeros -> CLR -> per-taxon fits -> debias -> test -> BH."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import __version__
from .bias import DEFAULT_GRID, debias
from .data_io import (CountTable, DesignMatrix, DesignSpec, MetadataTable, build_design,
                      filter_dataset, winsorize)
from .errors import ValidationError
from .inference import bh_adjust, p_values, t_statistics
from .lmm import fit_lmm_all
from .ols import compute_design_summary, fit_ols_all
from .preprocess import ADAPTIVE_THRESHOLD, clr_transform, handle_zeros

LN2 = math.log(2.0)


@dataclass
class LindaResult:
    """
    Per-taxon output plus run metadata.

    ``alpha_hat`` is on the natural-log scale. ``pvalue``/``padj`` are NaN for
    degenerate taxa, which are never rejected.
    """

    taxa_ids: list
    alpha_hat: np.ndarray
    stderr: np.ndarray
    t_stat: np.ndarray
    df: np.ndarray
    pvalue: np.ndarray
    padj: np.ndarray
    reject: np.ndarray
    degenerate: np.ndarray
    flags: list
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.taxa_ids)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "taxon": self.taxa_ids,
            "coefficient": self.alpha_hat,
            "coefficient_log2": self.alpha_hat / LN2,
            "stderr": self.stderr,
            "t_stat": self.t_stat,
            "df": self.df,
            "pvalue": self.pvalue,
            "padj": self.padj,
            "reject": self.reject.astype(int),
            "flags": self.flags,
        })


def run_linda(Y, design: DesignMatrix, *, groups=None, zero_handling: str = "adaptive",
              bias_correction: bool = True, q: float = 0.05, bandwidth="auto",
              grid_points: int = DEFAULT_GRID, adaptive_threshold: float = ADAPTIVE_THRESHOLD,
              threads: int = 1, taxa_ids=None) -> LindaResult:
    """
    Run the full procedure on a raw count matrix.

    Parameters
    ----------
    Y : array, shape (m, n)
        Counts, taxa in rows.
    design : DesignMatrix
        Column 0 is the covariate of interest, column 1 the intercept.
    groups : sequence, optional
        Per-sample labels; switches to the random-intercept model. Defaults to
        ``design.groups``.
    zero_handling : {"pseudo", "imputation", "adaptive"}
    bias_correction : bool
        Turning this off reports the raw CLR coefficients.
    q : float
        Target FDR.
    """
    Y = Y.counts if isinstance(Y, CountTable) else np.asarray(Y)
    m, n = Y.shape
    if n != design.n:
        raise ValidationError(f"count matrix has {n} samples but the design has {design.n}")
    if groups is None:
        groups = design.groups
    pos = handle_zeros(Y, zero_handling, design, threshold=adaptive_threshold)
    W = clr_transform(pos)
    zero_strategy, libsize_p = pos.zero_strategy, pos.libsize_p
    del pos

    meta = {
        "version": __version__,
        "method": "ols" if groups is None else "lmm",
        "n": n,
        "m": m,
        "d": design.d,
        "columns": ",".join(design.columns),
        "zero_handling": zero_handling,
        "zero_strategy": zero_strategy,
        "libsize_p": libsize_p,
    }

    flags = [[] for _ in range(m)]
    if groups is None:
        summary = compute_design_summary(design.Z)
        fits = fit_ols_all(W, design.Z, summary, threads=threads)
        alpha_tilde = fits.alpha_tilde
        degenerate = fits.degenerate.copy()
        df = np.full(m, float(fits.df))
        meta["df"] = fits.df
        meta["rho_hat"] = summary.rho_hat
    else:
        fits = fit_lmm_all(W, design.Z, groups)
        alpha_tilde = fits.alpha_tilde
        degenerate = fits.degenerate.copy()
        df = fits.df.copy()
        meta["df"] = "per-taxon"
        meta["n_groups"] = fits.n_groups
        meta["fallback_ols"] = int(fits.fallback_ols)
        for i in np.flatnonzero(~fits.converged):
            flags[i].append("nonconverged")
    for i in np.flatnonzero(degenerate):
        flags[i].append("degenerate")

    if bias_correction:
        alpha_hat, est = debias(alpha_tilde, n, bandwidth=bandwidth, grid_points=grid_points)
        meta.update(bias_correction="on", bias_shift=est.shift, bandwidth=est.bandwidth,
                    grid_lo=est.grid_lo, grid_hi=est.grid_hi, grid_points=est.grid_points,
                    mode_location=est.mode_location)
    else:
        alpha_hat = np.asarray(alpha_tilde, dtype=float).copy()
        meta.update(bias_correction="off", bias_shift=0.0)

    if groups is None:
        stderr = fits.stderr
        T = t_statistics(alpha_hat, fits.sigma2_hat, fits.summary.rho_hat, n, degenerate)
    else:
        stderr = fits.se_alpha
        with np.errstate(divide="ignore", invalid="ignore"):
            T = alpha_hat / stderr
        T[degenerate] = np.nan
    p = p_values(T, df)
    padj, reject = bh_adjust(p, q)
    meta["target_fdr"] = q
    return LindaResult(list(taxa_ids) if taxa_ids is not None else [f"taxon{i + 1}" for i in range(m)],
                       np.asarray(alpha_hat, dtype=float), np.asarray(stderr, dtype=float),
                       T, df, p, padj, reject, degenerate,
                       [",".join(f) if f else "." for f in flags], meta)


def linda(counts: CountTable, meta: MetadataTable, formula, *, min_libsize: int = 1000,
          min_prevalence: float = 0.10, winsor_quantile: float | None = 0.97,
          zero_handling: str = "adaptive", q: float = 0.05, bias_correction: bool = True,
          bandwidth="auto", grid_points: int = DEFAULT_GRID,
          adaptive_threshold: float = ADAPTIVE_THRESHOLD, threads: int = 1) -> LindaResult:
    """
    Analyze a count table against sample metadata.

    ``formula`` is ``"u + c1 + c2 | group"`` (adjustments and group optional)
    or a DesignSpec. Samples are filtered by library size and taxa by
    prevalence, then counts are winsorized per taxon (``winsor_quantile=None``
    skips it) before zero handling.
    """
    spec = formula if isinstance(formula, DesignSpec) else DesignSpec.parse(formula)
    meta = meta.aligned_to(counts)
    for name in [spec.covariate_of_interest, *spec.adjustments] + (
            [spec.random_group] if spec.random_group else []):
        if name not in meta.data.columns:
            raise ValidationError(f"metadata has no column {name!r}")
    counts, meta = filter_dataset(counts, meta, min_libsize, min_prevalence)
    if winsor_quantile is not None:
        counts = winsorize(counts, winsor_quantile)
    design = build_design(meta, spec, counts.sample_ids)
    result = run_linda(counts.counts, design, zero_handling=zero_handling,
                       bias_correction=bias_correction, q=q, bandwidth=bandwidth,
                       grid_points=grid_points, adaptive_threshold=adaptive_threshold,
                       threads=threads, taxa_ids=counts.taxa_ids)
    result.meta.update(formula=str(spec), min_libsize=min_libsize,
                       min_prevalence=min_prevalence,
                       winsor_quantile="off" if winsor_quantile is None else winsor_quantile,
                       filter_order="samples,taxa;winsorize;zeros")
    return result
