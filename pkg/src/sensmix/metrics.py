"""Rank and linear correlation between predicted and true quality scores.

srcc uses the closed-form rank-difference formula with average ranks
for ties; plcc is the plain product-moment coefficient.  Degenerate
inputs (a constant vector, where either coefficient is undefined) yield
NaN rather than an exception so batch evaluation can proceed; callers
that need to fail hard can check with np.isnan.
"""

from __future__ import annotations

import numpy as np

__all__ = ["average_ranks", "srcc", "plcc"]


def _validate(gt, pred, min_n: int) -> tuple[np.ndarray, np.ndarray]:
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if gt.ndim != 1 or gt.shape != pred.shape:
        raise ValueError(f"score vectors must be equal-length 1d, got {gt.shape} vs {pred.shape}")
    if gt.size < min_n:
        raise ValueError(f"need at least {min_n} scores, got {gt.size}")
    if not (np.all(np.isfinite(gt)) and np.all(np.isfinite(pred))):
        raise ValueError("scores must be finite")
    return gt, pred


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their rank range."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def srcc(gt, pred) -> float:
    """Spearman rank correlation via the rank-difference formula.

    Computed as (n(n^2-1) - 6 sum d^2) / (n(n^2-1)) with average ranks,
    so tie-free integer-rank inputs give exact results.  Returns NaN
    when either vector is constant.
    """
    gt, pred = _validate(gt, pred, min_n=3)
    if gt.min() == gt.max() or pred.min() == pred.max():
        return float("nan")
    d = average_ranks(gt) - average_ranks(pred)
    n = gt.size
    denom = n * (n * n - 1)
    return (denom - 6.0 * float(np.dot(d, d))) / denom


def plcc(gt, pred) -> float:
    """Pearson linear correlation; NaN when either vector is constant."""
    gt, pred = _validate(gt, pred, min_n=2)
    du = gt - gt.mean()
    dv = pred - pred.mean()
    su = float(np.dot(du, du))
    sv = float(np.dot(dv, dv))
    if su == 0.0 or sv == 0.0:
        return float("nan")
    return float(np.dot(du, dv)) / (np.sqrt(su) * np.sqrt(sv))
