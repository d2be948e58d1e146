"""
Compositional bias correction.

CLR regression coefficients are all offset by the same unknown amount. When
most taxa are null the offset sits at the mode of the coefficients, which is
located with a Gaussian kernel density estimate on a fixed grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

DEFAULT_GRID = 512
_GRID_PAD = 3.0
_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class BiasEstimate:
    """
    Attributes
    ----------
    shift : float
        Correction added to every coefficient (mode / sqrt(n), negated).
    bandwidth : float
        Kernel bandwidth on the sqrt(n) scale; 0 when all points coincide.
    grid_lo, grid_hi : float
    grid_points : int
    mode_location : float
        Density mode on the sqrt(n) scale.
    """

    shift: float
    bandwidth: float
    grid_lo: float
    grid_hi: float
    grid_points: int
    mode_location: float


def select_bandwidth(points) -> float | None:
    """
    Silverman's rule of thumb, ``0.9 * min(sd, IQR / 1.349) * m^(-1/5)``.

    Falls back to the standard deviation when the IQR is zero. Returns None
    when every point is identical, in which case the mode is that value.
    """
    x = np.asarray(points, dtype=float)
    if x.size < 3:
        raise ValidationError("bandwidth selection needs at least 3 points")
    if np.all(x == x[0]):
        return None
    sd = float(np.std(x, ddof=1))
    q75, q25 = np.quantile(x, [0.75, 0.25])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.349) if iqr > 0 else sd
    return 0.9 * spread * x.size ** (-0.2)


def kde_on_grid(points, h: float, grid_points: int = DEFAULT_GRID):
    """
    Gaussian KDE evaluated on ``grid_points`` equally spaced values spanning
    ``[min - 3h, max + 3h]``.

    Returns
    -------
    grid, density : ndarray
    """
    x = np.asarray(points, dtype=float)
    if h <= 0:
        raise ValidationError("bandwidth must be positive")
    lo = x.min()
    rel = x - lo
    span = rel.max() + 2 * _GRID_PAD * h
    grid_rel = -_GRID_PAD * h + span * np.arange(grid_points) / (grid_points - 1)
    dens = np.zeros(grid_points)
    # bound the temporary to ~4M entries
    step = max(1, 4_000_000 // grid_points)
    for k in range(0, x.size, step):
        z = (grid_rel[:, None] - rel[None, k:k + step]) / h
        dens += np.exp(-0.5 * z * z).sum(axis=1)
    dens /= x.size * h * _SQRT_2PI
    return lo + grid_rel, dens


def estimate_mode(points, h: float, grid_points: int = DEFAULT_GRID) -> float:
    """
    Grid argmax of the Gaussian KDE.

    Ties go to the grid value with the smallest absolute value, then the
    smallest value.
    """
    x = np.asarray(points, dtype=float)
    if x.size == 0:
        raise ValidationError("mode of an empty sample")
    if np.all(x == x[0]):
        return float(x[0])
    grid, dens = kde_on_grid(x, h, grid_points)
    best = np.flatnonzero(dens == dens.max())
    if len(best) > 1:
        best = best[np.lexsort((grid[best], np.abs(grid[best])))]
    return float(grid[best[0]])


def debias(alpha_tilde, n: int, bandwidth: float | str = "auto",
           grid_points: int = DEFAULT_GRID):
    """
    Shift coefficients so the mode of ``sqrt(n) * alpha_tilde`` moves to 0.

    Parameters
    ----------
    alpha_tilde : array or OlsFits/LmmFits
        Raw coefficients of the covariate of interest, one per taxon.
    n : int
        Sample count used for the sqrt(n) scaling.
    bandwidth : "auto" or float
        Kernel bandwidth on the sqrt(n) scale.

    Returns
    -------
    alpha_hat : ndarray
    BiasEstimate
    """
    a = np.asarray(getattr(alpha_tilde, "alpha_tilde", alpha_tilde), dtype=float)
    if a.size < 3:
        raise ValidationError("insufficient taxa for mode estimation")
    if not np.all(np.isfinite(a)):
        raise ValidationError("non-finite coefficients cannot be debiased")
    root_n = np.sqrt(n)
    pts = root_n * a
    if bandwidth == "auto":
        h = select_bandwidth(pts)
    else:
        h = float(bandwidth)
        if h <= 0:
            raise ValidationError("bandwidth must be positive")
        if np.all(pts == pts[0]):
            h = None
    if h is None:
        mode, h, lo, hi = float(pts[0]), 0.0, float(pts[0]), float(pts[0])
    else:
        mode = estimate_mode(pts, h, grid_points)
        lo, hi = float(pts.min() - _GRID_PAD * h), float(pts.max() + _GRID_PAD * h)
    shift = -mode / root_n
    est = BiasEstimate(shift, float(h), lo, hi, int(grid_points), mode)
    return a + shift, est
