"""Bridge matrices aligning a reference's instances to the main instance set.

A bridge is a sparse, row-stochastic ``n_main x n_ref`` matrix. It starts as
the 0/1 indicator of the known coupled pairs and is then diffused over two
anisotropic feature graphs, one per instance set, so that the coupling labels
spread to the uncoupled instances.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from ._kernels import explicit_topk
from .errors import (
    DuplicateIndexError,
    LengthMismatchError,
    NonPositiveScaleError,
    SingularSystemError,
    SizeLimitExceededError,
    TooFewPointsError,
)
from .manifold import as_prediction_vector, manifold_metric

logger = logging.getLogger(__name__)

DENSE_SIZE_LIMIT = 10_000
# entries of a dense solve below this fraction of the largest entry are round-off
DROP_RTOL = 1e-12
_PAD_LIMIT = 50_000_000  # max cells of the padded per-row buffer in sparsify_rows


def check_pairs(pairs, n_main: int, n_ref: int) -> np.ndarray:
    """Validate coupling labels and return them as an ``(p, 2)`` int array."""
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if arr.size and (
        arr[:, 0].min() < 0 or arr[:, 1].min() < 0
        or arr[:, 0].max() >= n_main or arr[:, 1].max() >= n_ref
    ):
        raise IndexError(f"coupling index out of range for sizes ({n_main}, {n_ref})")
    for col, side in ((0, "main"), (1, "reference")):
        uniq, counts = np.unique(arr[:, col], return_counts=True)
        if np.any(counts > 1):
            raise DuplicateIndexError(f"{side} index {uniq[counts > 1][0]} is coupled twice")
    return arr


def init_bridge(pairs, n_main: int, n_ref: int) -> sp.csr_matrix:
    """0/1 bridge with a one at every coupled ``(main, ref)`` pair."""
    arr = check_pairs(pairs, n_main, n_ref)
    data = np.ones(len(arr))
    return sp.csr_matrix((data, (arr[:, 0], arr[:, 1])), shape=(n_main, n_ref))


@dataclass
class FeatureGraph:
    """k-NN feature affinity reweighted by prediction similarity.

    ``feature_affinity`` is the symmetric Gaussian k-NN weight ``W^x``;
    ``affinity`` is its Hadamard product with ``exp(-(p_i - p_j)^2 / sigma_f2)``
    and ``laplacian`` the symmetric normalized Laplacian of ``affinity``.
    """

    feature_affinity: sp.csr_matrix
    affinity: sp.csr_matrix
    laplacian: sp.csr_matrix
    sigma_x2: float
    sigma_f2: float
    n_neighbors: int

    @property
    def n(self) -> int:
        return self.laplacian.shape[0]

    @cached_property
    def spectrum(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense eigendecomposition of the Laplacian (its real Schur form)."""
        if self.n > DENSE_SIZE_LIMIT:
            raise SizeLimitExceededError(f"dense path limited to n <= {DENSE_SIZE_LIMIT}, got {self.n}")
        return np.linalg.eigh(self.laplacian.toarray())

    def explicit_operator(self, delta_b: float) -> sp.csr_matrix:
        """``I - delta_b * L``, cached for the most recent step size."""
        cached = self.__dict__.get("_explicit_op")
        if cached is None or cached[0] != delta_b:
            op = sp.csr_matrix(sp.identity(self.n, format="csr") - delta_b * self.laplacian)
            op.sort_indices()
            cached = (delta_b, op)
            self.__dict__["_explicit_op"] = cached
        return cached[1]

    def with_predictions(self, predictions, sigma_f2: float | None = None) -> FeatureGraph:
        """Rebuild the anisotropic part for new predictions, keeping ``W^x``."""
        return _anisotropic_graph(
            self.feature_affinity, predictions, sigma_f2, self.sigma_x2, self.n_neighbors
        )


def knn_feature_affinity(features, n_neighbors: int) -> tuple[sp.csr_matrix, float]:
    """Gaussian weights over the ``n_neighbors`` nearest neighbors, symmetrized by max.

    The bandwidth is twice the mean distance to the ``n_neighbors`` nearest
    neighbors.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n_neighbors < 1:
        raise ValueError("n_neighbors must be at least 1")
    if n < n_neighbors + 1:
        raise TooFewPointsError(f"{n} points cannot have {n_neighbors} neighbors each")
    dist, ind = cKDTree(x).query(x, k=n_neighbors + 1)
    # drop the query point itself; with duplicates it need not come first
    is_self = ind == np.arange(n)[:, None]
    drop = np.where(is_self.any(axis=1), is_self.argmax(axis=1), n_neighbors)
    keep = np.ones_like(ind, dtype=bool)
    keep[np.arange(n), drop] = False
    dist = dist[keep].reshape(n, n_neighbors)
    ind = ind[keep].reshape(n, n_neighbors)

    sigma_x2 = 2.0 * float(dist.mean())
    if not sigma_x2 > 0:
        raise NonPositiveScaleError("all neighborhoods have zero extent; sigma_x2 would be 0")
    rows = np.repeat(np.arange(n), n_neighbors)
    w = np.exp(-(dist.ravel() ** 2) / sigma_x2)
    wx = sp.csr_matrix((w, (rows, ind.ravel())), shape=(n, n))
    wx = wx.maximum(wx.T).tocsr()
    wx.sort_indices()
    return wx, sigma_x2


def normalized_laplacian(w: sp.spmatrix) -> sp.csr_matrix:
    """``I - D^{-1/2} W D^{-1/2}``; zero-degree nodes get an identity row."""
    w = sp.csr_matrix(w)
    deg = np.asarray(w.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    pos = deg > 0
    inv_sqrt[pos] = 1.0 / np.sqrt(deg[pos])
    d = sp.diags(inv_sqrt)
    lap = sp.identity(w.shape[0], format="csr") - d @ w @ d
    lap = sp.csr_matrix((lap + lap.T) * 0.5)
    lap.sort_indices()
    return lap


def _anisotropic_graph(wx, predictions, sigma_f2, sigma_x2, n_neighbors) -> FeatureGraph:
    f = as_prediction_vector(predictions)
    if f.size != wx.shape[0]:
        raise LengthMismatchError(f"{f.size} predictions for {wx.shape[0]} instances")
    if sigma_f2 is None:
        sigma_f2 = float(f.var())
    if not sigma_f2 > 0:
        raise NonPositiveScaleError(f"sigma_f2 must be positive, got {sigma_f2}")
    coo = wx.tocoo()
    wf = np.exp(-((f[coo.row] - f[coo.col]) ** 2) / sigma_f2)
    w = sp.csr_matrix((coo.data * wf, (coo.row, coo.col)), shape=wx.shape)
    return FeatureGraph(
        feature_affinity=wx,
        affinity=w,
        laplacian=normalized_laplacian(w),
        sigma_x2=sigma_x2,
        sigma_f2=float(sigma_f2),
        n_neighbors=n_neighbors,
    )


def build_feature_graph(features, predictions, n_neighbors: int, sigma_f2: float | None = None) -> FeatureGraph:
    """Anisotropic graph over one feature domain.

    ``sigma_f2=None`` uses the variance of ``predictions``.
    """
    wx, sigma_x2 = knn_feature_affinity(features, n_neighbors)
    return _anisotropic_graph(wx, predictions, sigma_f2, sigma_x2, n_neighbors)


def sparsify_rows(b, k: int) -> sp.csr_matrix:
    """Keep the ``k`` largest entries of every row (ties go to the lower column)."""
    if k < 1:
        raise ValueError("k must be at least 1")
    b = sp.csr_matrix(b, copy=True)
    b.sum_duplicates()
    b.eliminate_zeros()
    counts = np.diff(b.indptr)
    if b.nnz == 0 or counts.max() <= k:
        return b
    n_rows = b.shape[0]
    rows = np.repeat(np.arange(n_rows), counts)
    width = int(counts.max())
    if n_rows * width <= _PAD_LIMIT:
        # k-th largest value of each row, from a padded (rows x width) buffer
        padded = np.full(n_rows * width, np.inf)
        shift = np.arange(n_rows) * width - b.indptr[:-1]
        padded[np.arange(b.nnz) + np.repeat(shift, counts)] = -b.data
        padded = padded.reshape(n_rows, width)
        padded.partition(k - 1, axis=1)
        kth = np.where(counts > k, -padded[:, k - 1], -np.inf)[rows]
        keep = b.data > kth
        tied = np.flatnonzero(b.data == kth)
        if tied.size:
            slots = k - np.bincount(rows[keep], minlength=n_rows)
            tied = tied[np.lexsort((b.indices[tied], rows[tied]))]
            t_rows = rows[tied]
            rank = np.arange(tied.size) - np.searchsorted(t_rows, t_rows, side="left")
            keep[tied[rank < slots[t_rows]]] = True
    else:
        order = np.lexsort((b.indices, -b.data, rows))
        rank = np.empty(b.nnz, dtype=np.int64)
        rank[order] = np.arange(b.nnz) - np.repeat(b.indptr[:-1], counts)
        keep = rank < k
    kept = np.bincount(rows[keep], minlength=n_rows)
    return sp.csr_matrix((b.data[keep], b.indices[keep], np.r_[0, np.cumsum(kept)]), shape=b.shape)


def normalize_rows(b) -> sp.csr_matrix:
    """Scale every nonzero row to sum to one; all-zero rows stay zero."""
    b = sp.csr_matrix(b, copy=True)
    sums = np.asarray(b.sum(axis=1)).ravel()
    # divide entrywise: the reciprocal of a subnormal row sum overflows
    per_entry = np.repeat(sums, np.diff(b.indptr))
    pos = per_entry > 0
    b.data[pos] = b.data[pos] / per_entry[pos]
    b.data[~pos] = 0.0
    b.eliminate_zeros()
    return b


def _clean_dense(v: np.ndarray, k: int) -> sp.csr_matrix:
    v = np.where(v > DROP_RTOL * max(float(np.abs(v).max(initial=0.0)), np.finfo(float).tiny), v, 0.0)
    if k < v.shape[1]:
        top = np.argsort(-v, axis=1, kind="stable")[:, :k]
        mask = np.zeros_like(v, dtype=bool)
        np.put_along_axis(mask, top, True, axis=1)
        v = np.where(mask, v, 0.0)
    return normalize_rows(sp.csr_matrix(v))


def solve_bridge_sylvester(b0, g_f: FeatureGraph, g_k: FeatureGraph, delta_b: float) -> np.ndarray:
    """Solve ``(I + delta_b L_f) V + delta_b V L_k = B0`` densely.

    Bartels-Stewart with real Schur forms; both Laplacians are symmetric, so
    their Schur forms are diagonal and the triangular back-substitution
    reduces to an elementwise division in the joint eigenbasis.
    """
    if not delta_b > 0:
        raise ValueError(f"delta_b must be positive, got {delta_b}")
    b0 = b0.toarray() if sp.issparse(b0) else np.asarray(b0, dtype=float)
    if b0.shape != (g_f.n, g_k.n):
        raise LengthMismatchError(f"bridge shape {b0.shape} != ({g_f.n}, {g_k.n})")
    if max(b0.shape) > DENSE_SIZE_LIMIT:
        raise SizeLimitExceededError(f"dense Sylvester solve limited to n <= {DENSE_SIZE_LIMIT}")
    lam_f, u_f = g_f.spectrum
    lam_k, u_k = g_k.spectrum
    denom = 1.0 + delta_b * (lam_f[:, None] + lam_k[None, :])
    if denom.min() <= 0:
        raise SingularSystemError("Sylvester operator is not positive definite")
    return u_f @ ((u_f.T @ b0 @ u_k) / denom) @ u_k.T


def bridge_step_implicit(b0, g_f: FeatureGraph, g_k: FeatureGraph, delta_b: float, k: int) -> sp.csr_matrix:
    """One implicit-Euler bridge step followed by clamp, top-``k`` and row normalization."""
    v = solve_bridge_sylvester(b0, g_f, g_k, delta_b)
    return _clean_dense(v, k)


def bridge_step_explicit(b, g_f: FeatureGraph, g_k: FeatureGraph, delta_b: float, k: int) -> sp.csr_matrix:
    """Two explicit-Euler half steps (main graph, then reference graph).

    Negative overshoot is clamped to zero before sparsifying to ``k`` entries
    per row and renormalizing.
    """
    b = sp.csr_matrix(b, dtype=float)
    if b.shape != (g_f.n, g_k.n):
        raise LengthMismatchError(f"bridge shape {b.shape} != ({g_f.n}, {g_k.n})")
    if not delta_b:
        return normalize_rows(sparsify_rows(b, k))
    if delta_b < 0:
        raise ValueError(f"delta_b must be nonnegative, got {delta_b}")
    if k < 1:
        raise ValueError("k must be at least 1")
    # the two half steps compose to (I - d L_f) B (I - d L_k)
    op_f = g_f.explicit_operator(delta_b)
    op_k = g_k.explicit_operator(delta_b)
    cols, vals, counts = explicit_topk(
        op_f.indptr, op_f.indices, op_f.data, b.indptr, b.indices, b.data,
        op_k.indptr, op_k.indices, op_k.data, g_k.n, k,
    )
    valid = np.arange(k)[None, :] < counts[:, None]
    out = sp.csr_matrix((vals[valid], cols[valid], np.r_[0, np.cumsum(counts)]), shape=b.shape)
    return normalize_rows(out)


def aligned_reference(b, g) -> np.ndarray:
    """Map reference evaluations onto the main instances: ``B @ g``."""
    g = np.asarray(g, dtype=float)
    if g.ndim != 1 or g.size != b.shape[1]:
        raise LengthMismatchError(f"reference length {g.size} != bridge columns {b.shape[1]}")
    return np.asarray(b @ g).ravel()


def alignment_score(f, g, b) -> float:
    """Centered gram alignment of ``f f^T`` and ``B g g^T B^T``.

    Both gram matrices have rank one, so the alignment collapses to the
    squared manifold metric between ``f`` and ``B g``.
    """
    f = as_prediction_vector(f, "f")
    if f.size != b.shape[0]:
        raise LengthMismatchError(f"main length {f.size} != bridge rows {b.shape[0]}")
    return manifold_metric(f, aligned_reference(b, g)) ** 2
