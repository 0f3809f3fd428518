"""Detection metrics: threshold grid, missed-detection / false-alarm rates, equal-error point."""
from __future__ import annotations

import math

import numpy as np


def threshold_grid(n: int = 400, lo: float = 1e-4) -> np.ndarray:
    """Increasing thresholds in (0, 1), log-spaced towards both ends and symmetric about 1/2."""
    if n < 2:
        raise ValueError("need at least two thresholds")
    half = n // 2
    left = np.geomspace(lo, 0.5, half + (n % 2), endpoint=bool(n % 2))
    right = 1.0 - left[::-1][(n % 2):]
    return np.concatenate([left, right])


def pm_pf(est, a_true) -> tuple[float, float]:
    """Missed-detection and false-alarm rates of a binary estimate.

    Denominators are the total active and inactive counts over all cells;
    an empty class yields NaN for its rate.
    """
    est = np.asarray(est).astype(bool)
    truth = np.asarray(a_true) > 0.5
    if est.shape != truth.shape:
        raise ValueError("estimate and truth differ in length")
    n_act = int(truth.sum())
    n_inact = truth.size - n_act
    pm = float(np.sum(truth & ~est)) / n_act if n_act else math.nan
    pf = float(np.sum(~truth & est)) / n_inact if n_inact else math.nan
    return pm, pf


def pm_pf_curves(a_hat, a_true, grid) -> tuple[np.ndarray, np.ndarray]:
    """PM and PF of ``a_hat >= l`` for every threshold ``l`` in ``grid``."""
    a_hat = np.asarray(a_hat, dtype=float)
    truth = np.asarray(a_true) > 0.5
    grid = np.asarray(grid, dtype=float)
    on, off = np.sort(a_hat[truth]), np.sort(a_hat[~truth])
    pm = np.searchsorted(on, grid, side="left") / on.size if on.size else np.full(grid.size, np.nan)
    pf = (off.size - np.searchsorted(off, grid, side="left")) / off.size if off.size else np.full(grid.size, np.nan)
    return pm, pf


def equal_error_from_curves(pm, pf, grid) -> tuple[float, bool]:
    """Common value where PM and PF cross (linear interpolation); flag False if they never cross."""
    pm = np.asarray(pm, dtype=float)
    pf = np.asarray(pf, dtype=float)
    grid = np.asarray(grid, dtype=float)
    diff = pm - pf  # increases with the threshold
    if np.any(diff == 0.0):
        k = int(np.flatnonzero(diff == 0.0)[0])
        return float(pm[k]), True
    sign_change = np.flatnonzero((diff[:-1] < 0) & (diff[1:] > 0))
    if sign_change.size == 0:
        return float(np.min(np.maximum(pm, pf))), False
    k = int(sign_change[0])
    t = -diff[k] / (diff[k + 1] - diff[k])
    return float(pm[k] + t * (pm[k + 1] - pm[k])), True


def equal_error_probability(a_hat, a_true, grid=None) -> float:
    """Probability of error at the threshold where PM equals PF."""
    if grid is None:
        grid = threshold_grid()
    if len(grid) < 2:
        raise ValueError("grid needs at least two points")
    pm, pf = pm_pf_curves(a_hat, a_true, grid)
    return equal_error_from_curves(pm, pf, grid)[0]
