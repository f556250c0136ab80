import numpy as np
import pytest
from hypothesis import given, strategies as st

from jointdiff.errors import EmptyPairsError
from jointdiff.ranking import (
    _descend,
    rank_loss,
    rank_objective,
    ranking_accuracy,
    train_linear_ranker,
)


def test_rank_loss_values():
    assert rank_loss(1.0, 0.0) == 0.0
    assert rank_loss(0.0, 0.0) == 1.0
    assert rank_loss(0.0, 1.0) == 4.0


def test_accuracy_examples():
    pairs = [(0, 1), (1, 2), (0, 2)]
    assert ranking_accuracy([3, 2, 1], pairs) == 1.0
    assert ranking_accuracy([1, 2, 3], pairs) == 0.0
    assert ranking_accuracy([1, 1, 0], [(0, 1), (0, 2)]) == 0.5


def test_accuracy_errors():
    with pytest.raises(EmptyPairsError):
        ranking_accuracy([1, 2], np.zeros((0, 2), int))
    with pytest.raises(IndexError):
        ranking_accuracy([1, 2], [(0, 2)])
    with pytest.raises(ValueError):
        ranking_accuracy([1, 2], [(1, 1)])


def test_separable_one_dimensional():
    r = train_linear_ranker(np.array([[0.0], [1.0]]), [(1, 0)], lambda_s=0.0)
    assert r.w[0] > 0
    value, _ = rank_objective(r.w, np.array([[1.0]]), 0.0)
    assert value < 1e-6
    assert ranking_accuracy(r.predict([[0.0], [1.0]]), [(1, 0)]) == 1.0


@pytest.mark.parametrize("lam", [0.0, 0.1, 1.0, 5.0])
def test_contradictory_pairs_closed_form(lam):
    # pairs (0,1), (1,0), (1,0) on x = [0, 1]; objective (1+w)^2 + 2(1-w)^2 + lam w^2
    x = np.array([[0.0], [1.0]])
    r = train_linear_ranker(x, [(0, 1), (1, 0), (1, 0)], lambda_s=lam)
    assert r.w[0] == pytest.approx(2.0 / (6.0 + 2.0 * lam), abs=1e-7)
    diffs = np.array([[-1.0], [1.0], [1.0]])
    _, grad = rank_objective(r.w, diffs, lam)
    assert np.linalg.norm(grad) < 1e-6


def test_strong_regularization_shrinks_weights(rng):
    x = rng.normal(size=(40, 3))
    pairs = [(i, i + 1) for i in range(39)]
    norms = [np.linalg.norm(train_linear_ranker(x, pairs, lambda_s=lam).w) for lam in (0.1, 10.0, 1e4)]
    assert norms[0] > norms[1] > norms[2] and norms[2] < 1e-2


def test_objective_not_above_zero_start(rng):
    x = rng.normal(size=(30, 4))
    truth = x @ rng.normal(size=4)
    idx = rng.integers(0, 30, size=(60, 2))
    idx = idx[idx[:, 0] != idx[:, 1]]
    pairs = np.where((truth[idx[:, 0]] > truth[idx[:, 1]])[:, None], idx, idx[:, ::-1])
    diffs = x[pairs[:, 0]] - x[pairs[:, 1]]
    r = train_linear_ranker(x, pairs, lambda_s=0.01)
    assert rank_objective(r.w, diffs, 0.01)[0] <= rank_objective(np.zeros(4), diffs, 0.01)[0]


def test_descent_is_monotone(rng):
    diffs = rng.normal(size=(25, 3))
    values = []
    for it in (1, 2, 5, 20, 100):
        _, v = _descend(diffs, 0.1, max_iter=it)
        values.append(v)
    assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))


def test_grid_selects_by_validation(rng):
    x = rng.normal(size=(60, 5))
    truth = x @ rng.normal(size=5)
    order = np.argsort(-truth)
    pairs = np.column_stack([order[:-1], order[1:]])
    val = pairs[::3]
    r = train_linear_ranker(x, pairs[1::3], val_pairs=val)
    best = max(
        ranking_accuracy(x @ train_linear_ranker(x, pairs[1::3], lambda_s=lam).w, val)
        for lam in (1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0)
    )
    assert ranking_accuracy(r.predict(x), val) == best


def test_trainer_deterministic(rng):
    x = rng.normal(size=(20, 3))
    pairs = [(i, i + 1) for i in range(19)]
    a = train_linear_ranker(x, pairs)
    b = train_linear_ranker(x, pairs)
    np.testing.assert_array_equal(a.w, b.w)


def test_trainer_errors():
    with pytest.raises(EmptyPairsError):
        train_linear_ranker(np.eye(3), np.zeros((0, 2), int))
    with pytest.raises(ValueError):
        train_linear_ranker(np.eye(3), [(0, 1)], lambda_s=-1.0)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 1))
def test_rank_loss_convex(a, b, t):
    mid = t * a + (1 - t) * b
    assert rank_loss(mid, 0.0) <= t * rank_loss(a, 0.0) + (1 - t) * rank_loss(b, 0.0) + 1e-9
