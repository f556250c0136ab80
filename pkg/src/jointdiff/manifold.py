"""Centering/scale normalization of prediction vectors and the induced metric.

Rank predictions are only meaningful up to a positive affine map, so every
vector is compared after removing its mean and dividing by its norm. The
resulting set of centered unit vectors is the predictor manifold.
"""
from __future__ import annotations

import numpy as np

from .errors import LengthMismatchError, NonPositiveScaleError, ZeroVarianceError

# ||Cv|| below this fraction of max(1, ||v||) means v is constant
ZERO_VARIANCE_RTOL = 1e-12


def as_prediction_vector(v, name: str = "predictions") -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size < 2:
        raise ValueError(f"{name} needs at least two entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def center(v: np.ndarray) -> np.ndarray:
    """Apply the centering matrix ``I - 11^T/n`` without forming it."""
    return v - v.mean()


def _centered_unit(v: np.ndarray, name: str) -> np.ndarray:
    c = center(v)
    norm = np.linalg.norm(c)
    if norm < ZERO_VARIANCE_RTOL * max(1.0, np.linalg.norm(v)):
        raise ZeroVarianceError(f"{name} is constant (zero variance)")
    return c / norm


def project_to_manifold(v) -> np.ndarray:
    """Return ``(v - mean(v)) / ||v - mean(v)||``.

    Raises
    ------
    ZeroVarianceError
        If ``v`` is constant.
    """
    v = as_prediction_vector(v)
    p = _centered_unit(v, "prediction vector")
    # a second pass removes the O(eps) residual mean left by the division
    return _centered_unit(p, "prediction vector")


def is_manifold_point(v, atol: float = 1e-10) -> bool:
    v = np.asarray(v, dtype=float)
    return abs(v.mean()) <= atol and abs(np.linalg.norm(v) - 1.0) <= atol


def manifold_metric(a, b) -> float:
    """Centered cosine similarity ``(Ca)^T Cb / (||Ca|| ||Cb||)``."""
    a = as_prediction_vector(a, "a")
    b = as_prediction_vector(b, "b")
    if a.shape != b.shape:
        raise LengthMismatchError(f"length mismatch: {a.size} vs {b.size}")
    ua = _centered_unit(a, "a")
    ub = _centered_unit(b, "b")
    return float(np.clip(ua @ ub, -1.0, 1.0))


def task_affinity(rho: float, sigma2: float) -> float:
    """Graph weight between two tasks with metric ``rho``: ``exp(-(1 - rho^2) / sigma2)``.

    Increases with ``|rho|`` and equals 1 for perfectly (anti-)correlated tasks.
    """
    if not sigma2 > 0:
        raise NonPositiveScaleError(f"sigma2 must be positive, got {sigma2}")
    rho = float(np.clip(rho, -1.0, 1.0))
    return float(np.exp(-(1.0 - rho * rho) / sigma2))
