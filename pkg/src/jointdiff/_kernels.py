"""Compiled kernel for the explicit bridge step.

The step ``(I - d L_f) B (I - d L_k)`` followed by clamping and top-K
selection keeps at most K entries per row, yet the intermediate product
holds hundreds. The kernel builds one product row at a time in a dense
scratch accumulator and selects the K survivors on the spot.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _better(val, col, best_val, best_col):
    return val > best_val or (val == best_val and col < best_col)


@njit(cache=True)
def explicit_topk(f_ptr, f_idx, f_val, b_ptr, b_idx, b_val, k_ptr, k_idx, k_val, n_ref, top_k):
    """Row-wise top-``top_k`` of ``max(F @ B @ G, 0)`` for CSR inputs.

    Returns ``(cols, vals, counts)`` with ``cols`` and ``vals`` of shape
    ``(n_rows, top_k)``, each row ordered by decreasing value (ties by
    increasing column) and ``counts`` the number of valid slots.
    """
    n_rows = f_ptr.size - 1
    out_cols = np.zeros((n_rows, top_k), dtype=np.int64)
    out_vals = np.zeros((n_rows, top_k))
    counts = np.zeros(n_rows, dtype=np.int64)
    acc1 = np.zeros(n_ref)
    acc2 = np.zeros(n_ref)
    # stamp[c] == i marks column c as touched while building row i
    stamp1 = np.full(n_ref, -1, dtype=np.int64)
    stamp2 = np.full(n_ref, -1, dtype=np.int64)
    list1 = np.empty(n_ref, dtype=np.int64)
    list2 = np.empty(n_ref, dtype=np.int64)
    for i in range(n_rows):
        # row i of F @ B
        n1 = 0
        for p in range(f_ptr[i], f_ptr[i + 1]):
            j = f_idx[p]
            a = f_val[p]
            for q in range(b_ptr[j], b_ptr[j + 1]):
                c = b_idx[q]
                if stamp1[c] != i:
                    stamp1[c] = i
                    list1[n1] = c
                    n1 += 1
                    acc1[c] = a * b_val[q]
                else:
                    acc1[c] += a * b_val[q]
        # times G
        n2 = 0
        for t in range(n1):
            c = list1[t]
            a = acc1[c]
            for q in range(k_ptr[c], k_ptr[c + 1]):
                c2 = k_idx[q]
                if stamp2[c2] != i:
                    stamp2[c2] = i
                    list2[n2] = c2
                    n2 += 1
                    acc2[c2] = a * k_val[q]
                else:
                    acc2[c2] += a * k_val[q]
        # insertion into a sorted buffer of size top_k
        cnt = 0
        for t in range(n2):
            c = list2[t]
            v = acc2[c]
            if not v > 0.0:
                continue
            if cnt == top_k and not _better(v, c, out_vals[i, cnt - 1], out_cols[i, cnt - 1]):
                continue
            pos = cnt if cnt < top_k else top_k - 1
            while pos > 0 and _better(v, c, out_vals[i, pos - 1], out_cols[i, pos - 1]):
                if pos < top_k:
                    out_vals[i, pos] = out_vals[i, pos - 1]
                    out_cols[i, pos] = out_cols[i, pos - 1]
                pos -= 1
            out_vals[i, pos] = v
            out_cols[i, pos] = c
            if cnt < top_k:
                cnt += 1
        counts[i] = cnt
    return out_cols, out_vals, counts
