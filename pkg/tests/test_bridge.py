import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from jointdiff import bridge as br
from jointdiff.errors import (
    DuplicateIndexError,
    LengthMismatchError,
    NonPositiveScaleError,
    SizeLimitExceededError,
    TooFewPointsError,
    ZeroVarianceError,
)
from jointdiff.manifold import manifold_metric


def random_graph(r, n, d=2, nn=3):
    return br.build_feature_graph(r.normal(size=(n, d)), r.normal(size=n), min(nn, n - 1))


def kron_solve(b0, lf, lk, delta):
    """Dense vectorized solve of (I + d Lf) V + d V Lk = B0 (column-major vec)."""
    n, m = b0.shape
    a = np.kron(np.eye(m), np.eye(n) + delta * lf) + delta * np.kron(lk.T, np.eye(n))
    return np.linalg.solve(a, b0.ravel(order="F")).reshape((n, m), order="F")


def direct_trace_alignment(f, g, b):
    """Centered gram alignment written out with full n x n matrices."""
    n = f.size
    c = np.eye(n) - 1.0 / n
    gf = np.outer(f, f)
    bgb = b @ np.outer(g, g) @ b.T
    num = np.trace(gf @ c @ bgb @ c)
    den = np.sqrt(np.trace(gf @ c @ gf @ c)) * np.sqrt(np.trace(bgb @ c @ bgb @ c))
    return num / den


# -- coupling labels --------------------------------------------------------

def test_init_bridge_from_pairs():
    b = br.init_bridge([(0, 0), (1, 1)], 3, 3)
    np.testing.assert_array_equal(b.toarray(), [[1, 0, 0], [0, 1, 0], [0, 0, 0]])


def test_init_bridge_empty():
    assert br.init_bridge(np.zeros((0, 2), int), 2, 4).nnz == 0


def test_init_bridge_rejects_duplicates():
    with pytest.raises(DuplicateIndexError):
        br.init_bridge([(0, 0), (1, 0)], 3, 3)
    with pytest.raises(DuplicateIndexError):
        br.init_bridge([(0, 0), (0, 1)], 3, 3)
    with pytest.raises(IndexError):
        br.init_bridge([(3, 0)], 3, 3)


# -- feature graphs ---------------------------------------------------------

def test_constant_predictions_leave_feature_affinity(rng):
    x = rng.normal(size=(15, 2))
    g = br.build_feature_graph(x, np.ones(15), 4, sigma_f2=1.0)
    np.testing.assert_allclose(g.affinity.toarray(), g.feature_affinity.toarray())


def test_coincident_points_have_unit_affinity():
    x = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    g = br.build_feature_graph(x, np.array([1.0, 1.0, 2.0, 3.0]), 1, sigma_f2=1.0)
    assert g.affinity[0, 1] == pytest.approx(1.0)
    assert g.affinity[1, 0] == pytest.approx(1.0)


def test_bandwidth_is_twice_mean_neighbor_distance():
    x = np.array([[0.0], [1.0], [3.0], [6.0]])
    g = br.build_feature_graph(x, np.arange(4.0), 1)
    # nearest-neighbor distances 1, 1, 2, 3
    assert g.sigma_x2 == pytest.approx(2 * 7 / 4)
    assert g.feature_affinity[2, 3] == pytest.approx(np.exp(-9 / 3.5))


def test_graph_is_symmetric_with_bounded_spectrum(rng):
    g = random_graph(rng, 20)
    lap = g.laplacian.toarray()
    np.testing.assert_allclose(lap, lap.T, atol=1e-14)
    ev = np.linalg.eigvalsh(lap)
    assert ev.min() >= -1e-8 and ev.max() <= 2 + 1e-8
    w = g.affinity.toarray()
    assert (w >= 0).all()
    np.testing.assert_allclose(w, w.T)


def test_knn_affinity_row_coverage(rng):
    x = rng.normal(size=(30, 3))
    wx, _ = br.knn_feature_affinity(x, 4)
    assert (np.diff(wx.indptr) >= 4).all()
    assert wx.diagonal().sum() == 0


def test_graph_errors(rng):
    with pytest.raises(TooFewPointsError):
        br.build_feature_graph(rng.normal(size=(3, 2)), np.arange(3.0), 3)
    with pytest.raises(NonPositiveScaleError):
        br.build_feature_graph(np.zeros((5, 2)), np.arange(5.0), 2)
    with pytest.raises(NonPositiveScaleError):
        br.build_feature_graph(rng.normal(size=(5, 2)), np.arange(5.0), 2, sigma_f2=0.0)
    with pytest.raises(LengthMismatchError):
        br.build_feature_graph(rng.normal(size=(5, 2)), np.arange(4.0), 2)


def test_with_predictions_keeps_feature_part(rng):
    g = random_graph(rng, 25)
    h = g.with_predictions(rng.normal(size=25), 0.5)
    assert h.feature_affinity is g.feature_affinity
    assert h.sigma_f2 == 0.5


# -- row operations ---------------------------------------------------------

def test_sparsify_tie_break_lowest_column():
    b = sp.csr_matrix(np.array([[1.0, 2.0, 2.0, 2.0, 0.5]]))
    np.testing.assert_array_equal(br.sparsify_rows(b, 2).toarray(), [[0, 2, 2, 0, 0]])


def test_sparsify_matches_brute_force(rng):
    for _ in range(200):
        d = rng.integers(0, 4, size=(6, 8)).astype(float) * (rng.random((6, 8)) < 0.6)
        k = int(rng.integers(1, 6))
        expect = np.zeros_like(d)
        for i, row in enumerate(d):
            idx = sorted(np.flatnonzero(row), key=lambda j: (-row[j], j))[:k]
            expect[i, idx] = row[idx]
        np.testing.assert_array_equal(br.sparsify_rows(sp.csr_matrix(d), k).toarray(), expect)


def test_normalize_rows_handles_tiny_sums():
    b = sp.csr_matrix(np.array([[1e-310, 3e-310, 0.0], [0.0, 0.0, 0.0], [2.0, 2.0, 0.0]]))
    out = br.normalize_rows(b).toarray()
    np.testing.assert_allclose(out, [[0.25, 0.75, 0], [0, 0, 0], [0.5, 0.5, 0]])


# -- implicit step ----------------------------------------------------------

def test_sylvester_matches_kronecker_and_scipy(rng):
    for _ in range(10):
        n, m = int(rng.integers(4, 20)), int(rng.integers(4, 20))
        gf, gk = random_graph(rng, n), random_graph(rng, m)
        b0 = rng.random((n, m))
        delta = float(10 ** rng.uniform(-3, 1))
        v = br.solve_bridge_sylvester(b0, gf, gk, delta)
        lf, lk = gf.laplacian.toarray(), gk.laplacian.toarray()
        ref = kron_solve(b0, lf, lk, delta)
        assert np.linalg.norm(v - ref) <= 1e-8 * np.linalg.norm(ref)
        ref2 = scipy.linalg.solve_sylvester(np.eye(n) + delta * lf, delta * lk, b0)
        assert np.linalg.norm(v - ref2) <= 1e-8 * np.linalg.norm(ref2)
        resid = (np.eye(n) + delta * lf) @ v + delta * v @ lk - b0
        assert np.linalg.norm(resid) <= 1e-8 * np.linalg.norm(b0)


def zero_graph(n):
    z = sp.csr_matrix((n, n))
    return br.FeatureGraph(feature_affinity=z, affinity=z, laplacian=z, sigma_x2=1.0, sigma_f2=1.0, n_neighbors=1)


def test_implicit_step_zero_laplacians(rng):
    b0 = rng.random((6, 5))
    v = br.solve_bridge_sylvester(b0, zero_graph(6), zero_graph(5), 0.3)
    np.testing.assert_allclose(v, b0, atol=1e-12)


def test_implicit_step_identity_limit(rng):
    gf, gk = random_graph(rng, 12), random_graph(rng, 10)
    b0 = rng.random((12, 10))
    gaps = [np.linalg.norm(br.solve_bridge_sylvester(b0, gf, gk, d) - b0) for d in (1e-2, 1e-4, 1e-6)]
    assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 1e-4


def test_implicit_step_is_row_stochastic(rng):
    gf, gk = random_graph(rng, 15), random_graph(rng, 12)
    b0 = br.init_bridge([(i, i) for i in range(5)], 15, 12)
    out = br.bridge_step_implicit(b0, gf, gk, 0.1, 3)
    sums = np.asarray(out.sum(axis=1)).ravel()
    np.testing.assert_allclose(sums[sums > 0], 1.0, atol=1e-12)
    assert (np.diff(out.indptr) <= 3).all()


def test_implicit_size_guard(monkeypatch, rng):
    monkeypatch.setattr(br, "DENSE_SIZE_LIMIT", 5)
    gf, gk = random_graph(rng, 8), random_graph(rng, 8)
    with pytest.raises(SizeLimitExceededError):
        br.bridge_step_implicit(np.eye(8), gf, gk, 0.1, 2)


def test_implicit_rejects_nonpositive_step(rng):
    gf, gk = random_graph(rng, 6), random_graph(rng, 6)
    with pytest.raises(ValueError):
        br.solve_bridge_sylvester(np.eye(6), gf, gk, 0.0)


# -- explicit step ----------------------------------------------------------

def scipy_explicit(b, gf, gk, delta, k):
    c = b - delta * (gf.laplacian @ b)
    c = sp.csr_matrix(c - delta * (c @ gk.laplacian))
    c.data = np.maximum(c.data, 0.0)
    return br.normalize_rows(br.sparsify_rows(c, k))


def test_explicit_zero_step_is_sparsify_normalize():
    r = np.random.default_rng(2)
    gf, gk = random_graph(r, 3), random_graph(r, 3)
    b = sp.csr_matrix(np.array([[2.0, 2.0, 0.0], [1.0, 3.0, 2.0], [0.0, 0.0, 0.0]]))
    out = br.bridge_step_explicit(b, gf, gk, 0.0, 2).toarray()
    np.testing.assert_allclose(out, [[0.5, 0.5, 0], [0, 0.6, 0.4], [0, 0, 0]])


def test_explicit_kernel_matches_sparse_products(rng):
    for t in range(100):
        n, m = int(rng.integers(3, 30)), int(rng.integers(3, 30))
        gf, gk = random_graph(rng, n), random_graph(rng, m)
        b = sp.random(n, m, density=0.3, random_state=t, format="csr")
        if t % 3 == 0:
            b.data[:] = 1.0  # exact ties
        k = int(rng.integers(1, 6))
        delta = float(10 ** rng.uniform(-6, -0.5))
        got = br.bridge_step_explicit(b, gf, gk, delta, k).toarray()
        np.testing.assert_allclose(got, scipy_explicit(b, gf, gk, delta, k).toarray(), atol=1e-13)


def test_explicit_step_first_order_agreement(rng):
    gf, gk = random_graph(rng, 20), random_graph(rng, 18)
    b0 = sp.csr_matrix(rng.random((20, 18)))
    gaps = []
    for d in (1e-3, 5e-4):
        ex = br.bridge_step_explicit(b0, gf, gk, d, 18).toarray()
        im = br.bridge_step_implicit(b0, gf, gk, d, 18).toarray()
        gaps.append(np.linalg.norm(ex - im))
    assert gaps[0] / gaps[1] >= 3.5


def test_explicit_step_does_not_modify_input(rng):
    gf, gk = random_graph(rng, 10), random_graph(rng, 10)
    b = sp.csr_matrix(rng.random((10, 10)))
    before = b.toarray().copy()
    br.bridge_step_explicit(b, gf, gk, 1e-3, 3)
    np.testing.assert_array_equal(b.toarray(), before)


def test_explicit_shape_check(rng):
    gf, gk = random_graph(rng, 10), random_graph(rng, 8)
    with pytest.raises(LengthMismatchError):
        br.bridge_step_explicit(sp.csr_matrix((10, 9)), gf, gk, 1e-3, 2)


# -- alignment ----------------------------------------------------------------

def test_aligned_reference_examples(rng):
    g = rng.normal(size=6)
    np.testing.assert_array_equal(br.aligned_reference(sp.identity(6, format="csr"), g), g)
    b = sp.csr_matrix(np.vstack([np.zeros(6), np.full((2, 6), 1 / 6)]))
    out = br.aligned_reference(b, g)
    assert out[0] == 0
    np.testing.assert_allclose(out[1:], g.mean())
    with pytest.raises(LengthMismatchError):
        br.aligned_reference(b, g[:5])


def test_alignment_identity_bridge(rng):
    f, g = rng.normal(size=9), rng.normal(size=9)
    eye = sp.identity(9, format="csr")
    assert br.alignment_score(f, f, eye) == pytest.approx(1.0)
    assert br.alignment_score(f, g, eye) == pytest.approx(manifold_metric(f, g) ** 2, abs=1e-12)
    assert br.alignment_score(f, g, eye) == pytest.approx(direct_trace_alignment(f, g, np.eye(9)), abs=1e-10)


def test_alignment_constant_aligned_reference(rng):
    b = sp.csr_matrix(np.full((4, 5), 0.2))
    with pytest.raises(ZeroVarianceError):
        br.alignment_score(rng.normal(size=4), rng.normal(size=5), b)


def test_rank_one_alignment_identity(rng):
    for _ in range(30):
        n, m = int(rng.integers(3, 40)), int(rng.integers(3, 40))
        f, g = rng.normal(size=n), rng.normal(size=m)
        b = br.normalize_rows(sp.random(n, m, density=0.5, random_state=int(rng.integers(1 << 30)))).toarray()
        b[np.all(b == 0, axis=1), 0] = 1.0
        assert br.alignment_score(f, g, sp.csr_matrix(b)) == pytest.approx(
            direct_trace_alignment(f, g, b), abs=1e-10
        )
