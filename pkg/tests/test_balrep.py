import json

import numpy as np
import pytest

from causal_bench.balrep import (
    CFRConfig, RepNet, fit_cfr, flatten, mmd_linear, objective, predict_po, sgd_step, trace_csv,
    unflatten,
)
from causal_bench.errors import EmptyArm, SchemaMismatch
from causal_bench.synthgen import project


def test_mmd_examples():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert mmd_linear(a, a[::-1]) == 0
    assert mmd_linear(np.zeros((3, 1)), np.ones((2, 1))) == 1
    rng = np.random.default_rng(0)
    rt, rc = rng.normal(size=(7, 3)), rng.normal(size=(5, 3))
    brute = sum((rt[:, d].mean() - rc[:, d].mean()) ** 2 for d in range(3))
    assert mmd_linear(rt, rc) == pytest.approx(brute, rel=1e-12)
    with pytest.raises(EmptyArm):
        mmd_linear(np.zeros((0, 2)), a)
    with pytest.raises(SchemaMismatch):
        mmd_linear(np.zeros((2, 2)), np.zeros((2, 3)))


def _toy(n=40, p=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    t = rng.integers(0, 2, n).astype(bool)
    t[:2] = [True, False]
    y = X @ rng.normal(size=p) + t + 0.1 * rng.normal(size=n)
    return X, t, y


@pytest.mark.parametrize("n_head", [0, 1, 2])
def test_gradient_matches_finite_differences(n_head):
    X, t, y = _toy()
    net = RepNet.init(3, (5, 4), (3,) * n_head, seed=1)
    args = (X, t, y, 0.7, "tanh", 2, n_head)
    _, _, _, grads = objective(net.params, *args)
    theta, g = flatten(net.params), flatten(grads)
    rng = np.random.default_rng(42)
    worst, h = 0.0, 1e-6
    for i in rng.choice(theta.size, 20, replace=False):
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        fd = (objective(unflatten(up, net.params), *args, grad=False)[0]
              - objective(unflatten(dn, net.params), *args, grad=False)[0]) / (2 * h)
        worst = max(worst, abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-8))
    assert worst < 1e-4


@pytest.mark.parametrize("activation,heads", [("tanh", (3,)), ("tanh", ()), ("linear", (3, 2))])
def test_packed_step_is_a_gradient_step(activation, heads):
    X, t, y = _toy()
    net = RepNet.init(3, (5, 4), heads, activation=activation, seed=2)
    nh = len(heads)
    before = {k: v.copy() for k, v in net.params.items()}
    total, fac, imb, grads = objective(before, X, t, y, 0.5, activation, 2, nh)
    out = sgd_step(net.params, X, t, y, 0.5, 0.01, activation, 2, nh)
    assert out[0] == pytest.approx(total, rel=1e-12)
    for k in before:
        assert np.allclose(net.params[k], before[k] - 0.01 * grads[k], atol=1e-14)


def test_zero_heads_predict_zero():
    net = RepNet.init(2, zero_heads=True)
    y0, y1 = predict_po(net, np.random.default_rng(0).normal(size=(10, 2)))
    assert np.all(y0 == 0) and np.all(y1 == 0)
    with pytest.raises(SchemaMismatch):
        predict_po(net, np.zeros((3, 5)))


def test_parameter_count():
    net = RepNet.init(4, (32, 32), (16,))
    expected = (4 * 32 + 32) + (32 * 32 + 32) + 2 * ((32 * 16 + 16) + (16 + 1))
    assert net.n_params() == expected


def test_linear_alpha_zero_matches_least_squares():
    rng = np.random.default_rng(3)
    n = 1024
    X = rng.normal(size=(n, 2))
    t = rng.integers(0, 2, n).astype(bool)
    y = X @ np.array([1.0, -2.0]) + np.where(t, X[:, 0] + 0.5, 0.0) + 0.3 * rng.normal(size=n)
    net = fit_cfr(X, t, y, alpha=0.0, activation="linear", rep_layers=(4,), head_layers=(),
                  epochs=150, batch_size=32, step_size=0.01, precision="float64", seed=0)
    y0, y1 = predict_po(net, X)
    mse = np.mean((np.where(t, y1, y0) - y) ** 2)
    ols = {}
    for arm in (True, False):
        A = np.column_stack([np.ones((t == arm).sum()), X[t == arm]])
        coef, *_ = np.linalg.lstsq(A, y[t == arm], rcond=None)
        ols[arm] = np.column_stack([np.ones(n), X]) @ coef
    ls_mse = np.mean((np.where(t, ols[True], ols[False]) - y) ** 2)
    assert mse <= 1.1 * ls_mse
    ite_ls = ols[True] - ols[False]
    assert np.sqrt(np.mean((y1 - y0 - ite_ls) ** 2)) <= 0.1 * np.sqrt(np.mean(ite_ls ** 2))


def test_large_alpha_keeps_imbalance_down():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(512, 2))
    t = rng.integers(0, 2, 512).astype(bool)
    y = X[:, 0] + 0.1 * rng.normal(size=512)
    net = fit_cfr(X, t, y, alpha=100.0, epochs=20, batch_size=64, step_size=1e-3)
    assert net.trace[-1]["imbalance"] < net.trace[0]["imbalance"] or net.trace[-1]["imbalance"] < 1e-4


def test_trace_invariant_and_early_decrease(small_ds):
    X = project(small_ds, "C,A")
    net = fit_cfr(X, small_ds.t, small_ds.y_f, epochs=5)
    tot = [r["total"] for r in net.trace]
    assert tot[5] < tot[0]
    for r in net.trace:
        assert r["total"] == pytest.approx(r["factual"] + net.alpha * r["imbalance"], rel=1e-12)
    csv = trace_csv(net).splitlines()
    assert csv[0] == "epoch,factual,imbalance,total" and len(csv) == 7


def test_row_permutation_changes_nothing():
    X, t, y = _toy(300, 2, seed=5)
    a = fit_cfr(X, t, y, epochs=3, batch_size=64)
    perm = np.random.default_rng(0).permutation(300)
    b = fit_cfr(X[perm], t[perm], y[perm], epochs=3, batch_size=64)
    assert a.to_json() == b.to_json()
    again = fit_cfr(X, t, y, epochs=3, batch_size=64)
    assert np.array_equal(predict_po(a, X)[1], predict_po(again, X)[1])


def test_json_round_trip_and_validation():
    X, t, y = _toy(300, 2)
    net = fit_cfr(X, t, y, epochs=2, batch_size=64)
    back = RepNet.from_dict(json.loads(net.to_json()))
    assert np.array_equal(predict_po(back, X)[0], predict_po(net, X)[0])
    with pytest.raises(ValueError):
        fit_cfr(X[:10], t[:10], y[:10])
    with pytest.raises(EmptyArm):
        fit_cfr(X, np.ones(300, bool), y, batch_size=64)
    with pytest.raises(TypeError):
        fit_cfr(X, t, y, learning_rate=0.1)
    cfg = CFRConfig(epochs=1, batch_size=64)
    fit_cfr(X, t, y, cfg, epochs=2)
    assert cfg.epochs == 1
