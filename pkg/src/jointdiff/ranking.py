"""Linear rank predictors trained from pairwise labels, and ranking accuracy."""
from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import EmptyPairsError

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = (1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0)


def check_rank_pairs(pairs, n: int) -> np.ndarray:
    """Return ``pairs`` as an ``(l, 2)`` int array; ``(i, j)`` means i ranks above j."""
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if arr.size and (arr.min() < 0 or arr.max() >= n):
        raise IndexError(f"rank pair index out of range for {n} instances")
    if np.any(arr[:, 0] == arr[:, 1]):
        raise ValueError("a rank pair compares an instance with itself")
    return arr


def rank_loss(fi, fj):
    """Squared hinge ``max(1 - (fi - fj), 0)^2``."""
    return np.maximum(1.0 - (np.asarray(fi) - np.asarray(fj)), 0.0) ** 2


def ranking_accuracy(predictions, pairs) -> float:
    """Fraction of pairs ``(i, j)`` with ``predictions[i] > predictions[j]``; ties are wrong."""
    p = np.asarray(predictions, dtype=float)
    arr = check_rank_pairs(pairs, p.size)
    if len(arr) == 0:
        raise EmptyPairsError("ranking accuracy needs at least one pair")
    return float(np.mean(p[arr[:, 0]] > p[arr[:, 1]]))


@dataclass
class LinearRanker:
    w: np.ndarray
    lambda_s: float

    def predict(self, features) -> np.ndarray:
        return np.asarray(features, dtype=float) @ self.w


def rank_objective(w, diffs, lambda_s):
    """Regularized rank energy and its gradient; ``diffs`` rows are ``x_i - x_j``."""
    slack = np.maximum(1.0 - diffs @ w, 0.0)
    value = float(slack @ slack + lambda_s * (w @ w))
    grad = -2.0 * (diffs.T @ slack) + 2.0 * lambda_s * w
    return value, grad


def _descend(diffs, lambda_s, max_iter=5000, gtol=1e-8):
    w = np.zeros(diffs.shape[1])
    value, grad = rank_objective(w, diffs, lambda_s)
    step = 1.0
    for _ in range(max_iter):
        gnorm = np.linalg.norm(grad)
        if gnorm < gtol:
            break
        while True:
            trial = w - step * grad
            t_value, t_grad = rank_objective(trial, diffs, lambda_s)
            # Armijo sufficient decrease
            if t_value <= value - 0.5 * step * gnorm**2:
                break
            step *= 0.5
            if step < 1e-20:
                return w, value
        w, value, grad = trial, t_value, t_grad
        step *= 2.0
    return w, value


def train_linear_ranker(
    features,
    train_pairs,
    lambda_s: float | Sequence[float] = DEFAULT_LAMBDA_GRID,
    val_pairs=None,
    max_iter: int = 5000,
    gtol: float = 1e-8,
) -> LinearRanker:
    """Fit ``f(x) = w^T x`` to pairwise labels by gradient descent.

    When ``lambda_s`` is a sequence, every value is fitted and the one with the
    best accuracy on ``val_pairs`` (or on ``train_pairs`` when no validation
    pairs are given) is kept; ties go to the earlier grid value.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ValueError("need at least two instances")
    tp = check_rank_pairs(train_pairs, x.shape[0])
    if len(tp) == 0:
        raise EmptyPairsError("no training pairs")
    diffs = x[tp[:, 0]] - x[tp[:, 1]]

    grid = [float(lambda_s)] if np.isscalar(lambda_s) else [float(v) for v in lambda_s]
    if not grid:
        raise ValueError("empty regularization grid")
    if any(v < 0 for v in grid):
        raise ValueError("lambda_s must be nonnegative")
    select = val_pairs if val_pairs is not None and len(val_pairs) else tp

    best = None
    for lam in grid:
        w, _ = _descend(diffs, lam, max_iter=max_iter, gtol=gtol)
        acc = ranking_accuracy(x @ w, select) if len(grid) > 1 else 0.0
        logger.debug("lambda_s=%g accuracy=%.4f", lam, acc)
        if best is None or acc > best[0]:
            best = (acc, LinearRanker(w=w, lambda_s=lam))
    return best[1]
