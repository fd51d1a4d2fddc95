import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causal_bench.boost import BoostedModel, Tree, fit_gbm, ite_predict, predict, with_treatment
from causal_bench.errors import SchemaMismatch


def _data(n=400, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    t = rng.integers(0, 2, n).astype(float)
    y = np.sin(X[:, 0]) + 0.5 * t * (X[:, 1] > 0) + 0.05 * rng.normal(size=n)
    return np.column_stack([X, t]), y


FEATS = ("x0", "x1", "t")


def test_constant_target():
    X, _ = _data(50)
    m = fit_gbm(X, np.full(50, 2.5), features=FEATS)
    assert m.best_iter == 0 and np.all(m.predict(X) == 2.5)


def test_step_function_depth_one():
    x = np.linspace(-1, 1, 100)[:, None]
    y = (x[:, 0] > 0).astype(float)
    m = fit_gbm(x, y, depth=1, max_trees=50, val_frac=0.0, min_leaf_weight=1.0)
    assert np.mean((m.predict(x) - y) ** 2) < 1e-3


def test_double_weights_identical_model():
    X, y = _data()
    w = np.random.default_rng(1).uniform(0.5, 2.0, y.size)
    a = fit_gbm(X, y, weights=w, features=FEATS, seed=3)
    b = fit_gbm(X, y, weights=2 * w, features=FEATS, seed=3)
    assert a.to_json() == b.to_json()


def test_zero_weight_rows_are_ignored():
    X, y = _data()
    extra_X = np.random.default_rng(2).normal(size=(50, 3)) * 10
    extra_y = np.full(50, 1e6)
    w = np.r_[np.ones(y.size), np.zeros(50)]
    a = fit_gbm(X, y, features=FEATS, seed=5)
    b = fit_gbm(np.r_[X, extra_X], np.r_[y, extra_y], weights=w, features=FEATS, seed=5,
                stratify=np.r_[X[:, 2], extra_X[:, 2]])
    assert a.to_json() == b.to_json()


def test_init_only_and_hand_tree():
    init = BoostedModel(trees=[], learning_rate=0.1, init=1.5, best_iter=0, features=("a",))
    assert np.all(predict(init, np.zeros((4, 1))) == 1.5)
    tree = Tree(feature=np.array([0, -1, -1]), threshold=np.array([0.3, 0, 0]),
                left=np.array([1, 0, 0]), right=np.array([2, 0, 0]),
                value=np.array([0.0, -2.0, 4.0]), max_depth=1)
    m = BoostedModel(trees=[tree], learning_rate=0.5, init=1.0, best_iter=1, features=("a",))
    assert m.predict(np.array([[0.3], [0.31], [-5.0]])).tolist() == [0.0, 3.0, 0.0]


def test_training_fit_never_worse_than_init_and_monotone():
    X, y = _data()
    w = np.random.default_rng(4).uniform(0.2, 3.0, y.size)
    m = fit_gbm(X, y, weights=w, features=FEATS, val_frac=0.0, max_trees=60)
    mse = np.average((m.predict(X) - y) ** 2, weights=w)
    var = np.average((y - np.average(y, weights=w)) ** 2, weights=w)
    assert mse <= var
    assert np.all(np.diff(m.train_loss) <= 1e-12)


def test_tree_depth_and_finite_leaves():
    X, y = _data()
    m = fit_gbm(X, y, depth=3, features=FEATS)
    assert 0 < m.best_iter <= len(m.trees) or m.best_iter == len(m.trees)
    for tree in m.trees:
        assert tree.depth <= 3 and np.all(np.isfinite(tree.value))
        internal = tree.feature >= 0
        assert np.all(tree.left[internal] > 0) and np.all(tree.right[internal] > 0)


def test_determinism():
    X, y = _data()
    assert fit_gbm(X, y, features=FEATS, seed=9).to_json() == fit_gbm(X, y, features=FEATS, seed=9).to_json()


def test_ite_plugin():
    X, y = _data()
    m = fit_gbm(X, y, features=FEATS)
    ite = ite_predict(m, X[:, :2])
    assert np.allclose(ite, m.predict(with_treatment(X[:, :2], 1)) - m.predict(with_treatment(X[:, :2], 0)))
    # y = t exactly
    t = X[:, 2]
    mt = fit_gbm(X, t, features=FEATS)
    assert np.allclose(ite_predict(mt, X[:, :2]), 1.0, atol=0.05)
    shifted = fit_gbm(X, y + 10.0, features=FEATS)
    assert np.allclose(ite_predict(shifted, X[:, :2]), ite, atol=1e-9)


def test_no_split_on_t_gives_zero_ite():
    X, _ = _data()
    y = np.sin(X[:, 0])
    m = fit_gbm(X, y, features=FEATS)
    assert all(2 not in tree.feature for tree in m.trees)
    assert np.all(ite_predict(m, X[:, :2]) == 0)


def test_schema_errors():
    X, y = _data(60)
    m = fit_gbm(X, y, features=FEATS)
    with pytest.raises(SchemaMismatch):
        m.predict(X[:, :2])
    other = fit_gbm(X, y, features=("a", "t", "b"))
    with pytest.raises(SchemaMismatch):
        ite_predict(other, X[:, :2])


def test_json_round_trip():
    X, y = _data()
    m = fit_gbm(X, y, features=FEATS)
    back = BoostedModel.from_dict(json.loads(m.to_json()))
    assert np.array_equal(back.predict(X), m.predict(X))


@settings(max_examples=25)
@given(st.integers(20, 120), st.integers(0, 1000))
def test_validation_choice_is_argmin(n, seed):
    X, y = _data(n, seed)
    m = fit_gbm(X, y, features=FEATS, seed=seed, max_trees=40)
    assert m.best_iter <= len(m.trees)
    if m.val_loss:
        assert m.val_loss[m.best_iter] == min(m.val_loss)
