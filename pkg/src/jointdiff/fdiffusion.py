"""Implicit-Euler denoising of the main predictor against frozen references.

One step maximizes

    O(p) = <p, f>_M^2 + delta * sum_k w_k <p, g_k>_M^2

over the predictor manifold. Writing ``O(p) = p^T Q p / p^T C p`` with
``Q = S S^T`` and all columns of ``S`` centered, the maximizer is the top
left singular vector of ``S``. Only the small Gram matrix ``S^T S`` is ever
decomposed, so a step costs O(m^2 n).
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSpectrumWarning, LengthMismatchError
from .manifold import as_prediction_vector, manifold_metric, project_to_manifold

logger = logging.getLogger(__name__)

TIE_TOL = 1e-12


@dataclass(frozen=True)
class ScoreProblem:
    """Inputs of a single f-diffusion step.

    ``aligned_refs`` holds the references already mapped onto the main
    instance set (one row per reference); ``weights`` are the task
    affinities between the current main predictor and each reference.
    """

    f_current: np.ndarray
    aligned_refs: np.ndarray
    weights: np.ndarray
    delta: float
    _unit_refs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        f = project_to_manifold(self.f_current)
        n = f.size
        refs = np.asarray(self.aligned_refs, dtype=float)
        if refs.size == 0:
            refs = np.zeros((0, n))
        refs = np.atleast_2d(refs)
        if refs.shape[1] != n:
            raise LengthMismatchError(
                f"references have length {refs.shape[1]}, main predictor has {n}"
            )
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if w.size != refs.shape[0]:
            raise LengthMismatchError(f"{w.size} weights for {refs.shape[0]} references")
        # exp underflow may produce exact zeros; those references drop out
        if np.any(w < 0) or np.any(w > 1):
            raise ValueError("weights must lie in [0, 1]")
        if not self.delta >= 0:
            raise ValueError(f"delta must be nonnegative, got {self.delta}")
        units = np.array([project_to_manifold(g) for g in refs]).reshape(refs.shape)
        for arr in (f, refs, w, units):
            arr.setflags(write=False)
        object.__setattr__(self, "f_current", f)
        object.__setattr__(self, "aligned_refs", refs)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "_unit_refs", units)

    @property
    def n(self) -> int:
        return self.f_current.size

    @property
    def m(self) -> int:
        return self.aligned_refs.shape[0]


def build_s_matrix(p: ScoreProblem) -> np.ndarray:
    """Return the ``n x (m+1)`` factor ``S`` with ``Q = S S^T``."""
    s = np.empty((p.n, p.m + 1))
    s[:, 0] = p.f_current
    if p.m:
        s[:, 1:] = p._unit_refs.T * np.sqrt(p.delta * p.weights)
    return s


def score(p: ScoreProblem, candidate) -> float:
    """Evaluate the score functional at ``candidate`` via manifold metrics."""
    candidate = as_prediction_vector(candidate, "candidate")
    if candidate.size != p.n:
        raise LengthMismatchError(f"candidate length {candidate.size} != {p.n}")
    total = manifold_metric(candidate, p.f_current) ** 2
    for w, g in zip(p.weights, p._unit_refs):
        total += p.delta * w * manifold_metric(candidate, g) ** 2
    return float(total)


def _sign_normalize(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def diffuse_f_step(p: ScoreProblem, f_initial) -> np.ndarray:
    """Maximize the score over the manifold and orient the result like ``f_initial``.

    Warns with :class:`DegenerateSpectrumWarning` when the top eigenvalue is
    repeated; the tied eigenvector best correlated with ``f_initial`` is used.
    """
    f0 = as_prediction_vector(f_initial, "f_initial")
    if f0.size != p.n:
        raise LengthMismatchError(f"f_initial length {f0.size} != {p.n}")
    s = build_s_matrix(p)
    gram = s.T @ s
    evals, evecs = np.linalg.eigh(gram)
    top = evals[-1]
    tied = np.flatnonzero(evals >= top - TIE_TOL * max(1.0, top))
    if tied.size > 1:
        warnings.warn(
            f"top eigenvalue {top:.6g} has multiplicity {tied.size}",
            DegenerateSpectrumWarning,
            stacklevel=2,
        )
        candidates = [s @ evecs[:, j] for j in tied]
        best = max(range(len(candidates)), key=lambda j: abs(manifold_metric(candidates[j], f0)))
        v = evecs[:, tied[best]]
    else:
        v = evecs[:, -1]
    v = _sign_normalize(v)
    u = project_to_manifold(s @ v / np.sqrt(top))
    if manifold_metric(u, f0) < 0:
        u = -u
    return u
