"""Least-squares gradient boosted regression trees with sample weights.

Trees are grown level-wise on binned features: each level builds the
weighted residual histograms of every open node with one ``bincount`` per
feature, so a depth-d tree costs O(d * n * p). The number of trees is picked
by early stopping on a seeded, t-stratified holdout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaMismatch


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    max_depth: int

    def apply(self, X) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        for _ in range(self.max_depth):
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                break
            go_left = X[rows, np.where(internal, f, 0)] <= self.threshold[node]
            node = np.where(internal, np.where(go_left, self.left[node], self.right[node]), node)
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    @property
    def depth(self) -> int:
        d = np.zeros(self.feature.size, dtype=int)
        for i in range(self.feature.size):
            if self.feature[i] >= 0:
                d[self.left[i]] = d[self.right[i]] = d[i] + 1
        return int(d.max())

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d: dict, max_depth: int) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=float),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=float),
            max_depth=max_depth,
        )


@dataclass(frozen=True)
class BoostedModel:
    trees: list
    learning_rate: float
    init: float
    best_iter: int
    features: tuple
    train_loss: list = field(default_factory=list, repr=False)
    val_loss: list = field(default_factory=list, repr=False)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.features):
            raise SchemaMismatch(f"expected {len(self.features)} columns {self.features}, got {X.shape}")
        out = np.full(X.shape[0], self.init)
        for tree in self.trees[: self.best_iter]:
            out += self.learning_rate * tree.predict(X)
        return out

    def to_dict(self) -> dict:
        return {
            "init": self.init,
            "learning_rate": self.learning_rate,
            "best_iter": self.best_iter,
            "features": list(self.features),
            "max_depth": self.trees[0].max_depth if self.trees else 0,
            "trees": [t.to_dict() for t in self.trees[: self.best_iter]],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedModel":
        trees = [Tree.from_dict(t, d["max_depth"]) for t in d["trees"]]
        return cls(trees=trees, learning_rate=d["learning_rate"], init=d["init"],
                   best_iter=d["best_iter"], features=tuple(d["features"]))


def _candidate_thresholds(x, exact: bool, max_bins: int) -> np.ndarray:
    u = np.unique(x)
    if u.size <= 1:
        return np.empty(0)
    if exact or u.size <= max_bins + 1:
        return 0.5 * (u[:-1] + u[1:])
    qs = np.quantile(u if u.size < x.size else x, np.arange(1, max_bins + 1) / (max_bins + 1))
    # snap to midpoints between neighbouring observed values
    pos = np.clip(np.searchsorted(u, qs, side="right"), 1, u.size - 1)
    return np.unique(0.5 * (u[pos - 1] + u[pos]))


def _split_rows(n, stratify, val_frac, seed):
    if val_frac <= 0:
        return np.arange(n), np.empty(0, dtype=np.int64)
    rng = np.random.Generator(np.random.Philox(seed))
    groups = np.zeros(n, dtype=np.int64) if stratify is None else np.unique(stratify, return_inverse=True)[1]
    val = []
    for g in range(groups.max() + 1):
        idx = np.flatnonzero(groups == g)
        k = int(round(val_frac * idx.size))
        if idx.size - k < 1:
            k = idx.size - 1
        val.append(rng.permutation(idx)[:k])
    val = np.sort(np.concatenate(val)).astype(np.int64)
    mask = np.ones(n, dtype=bool)
    mask[val] = False
    return np.flatnonzero(mask), val


def _grow_tree(codes, thresholds, w, r, depth, min_leaf_weight, min_gain):
    n, p = codes.shape
    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [0.0]
    node = np.zeros(n, dtype=np.int64)
    open_nodes = [0]
    value[0] = float(w @ r / w.sum())
    for _ in range(depth):
        if not open_nodes:
            break
        k = len(open_nodes)
        local = np.full(len(feature), -1, dtype=np.int64)
        local[open_nodes] = np.arange(k)
        loc = local[node]
        active = loc >= 0
        la, wa, wra = loc[active], w[active], w[active] * r[active]
        W = np.bincount(la, wa, minlength=k)
        WR = np.bincount(la, wra, minlength=k)
        base = np.divide(WR ** 2, W, out=np.zeros(k), where=W > 0)
        best_gain = np.full(k, min_gain)
        best_f = np.full(k, -1)
        best_b = np.zeros(k, dtype=np.int64)
        for f in range(p):
            B = thresholds[f].size
            if B == 0:
                continue
            idx = la * (B + 1) + codes[active, f]
            hw = np.bincount(idx, wa, minlength=k * (B + 1)).reshape(k, B + 1)
            hr = np.bincount(idx, wra, minlength=k * (B + 1)).reshape(k, B + 1)
            wl = np.cumsum(hw, axis=1)[:, :B]
            rl = np.cumsum(hr, axis=1)[:, :B]
            wr_ = W[:, None] - wl
            rr = WR[:, None] - rl
            ok = (wl >= min_leaf_weight) & (wr_ >= min_leaf_weight)
            with np.errstate(divide="ignore", invalid="ignore"):
                gain = rl ** 2 / wl + rr ** 2 / wr_ - base[:, None]
            gain = np.where(ok, gain, -np.inf)
            b = np.argmax(gain, axis=1)
            g = gain[np.arange(k), b]
            better = g > best_gain
            best_gain = np.where(better, g, best_gain)
            best_f = np.where(better, f, best_f)
            best_b = np.where(better, b, best_b)
        new_open = []
        for i, nid in enumerate(open_nodes):
            f = int(best_f[i])
            if f < 0:
                continue
            thr = float(thresholds[f][best_b[i]])
            feature[nid], threshold[nid] = f, thr
            left[nid], right[nid] = len(feature), len(feature) + 1
            for _ in range(2):
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                value.append(0.0)
            rows = np.flatnonzero(node == nid)
            go = codes[rows, f] <= best_b[i]
            node[rows[go]] = left[nid]
            node[rows[~go]] = right[nid]
            new_open += [left[nid], right[nid]]
        if new_open:
            m = len(feature)
            Wn = np.bincount(node, w, minlength=m)
            Rn = np.bincount(node, w * r, minlength=m)
            for c in new_open:
                value[c] = float(Rn[c] / Wn[c])
        open_nodes = new_open
    tree = Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=float),
        max_depth=depth,
    )
    return tree, node


def fit_gbm(X, y, weights=None, depth=3, learning_rate=0.1, max_trees=500, val_frac=0.2,
            patience=20, min_leaf_weight=5.0, seed=0, features=None, stratify=None,
            max_bins=64, exact_limit=10_000) -> BoostedModel:
    """Fit least-squares boosting; ``min_leaf_weight`` is in units of the mean
    training weight. ``stratify`` defaults to the column named ``t``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    features = tuple(features) if features is not None else tuple(f"x{i}" for i in range(p))
    if len(features) != p or y.shape != (n,):
        raise SchemaMismatch("X, y and feature names disagree")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise ValueError("weights must be finite, nonnegative, with positive total")
    if stratify is None and "t" in features:
        stratify = X[:, features.index("t")]
    # zero-weight rows carry no information; drop them before anything else
    pos = w > 0
    X, y, w = X[pos], y[pos], w[pos]
    if stratify is not None:
        stratify = np.asarray(stratify)[pos]
    tr, va = _split_rows(y.size, stratify, val_frac, seed)
    Xtr, ytr, wtr = X[tr], y[tr], w[tr] / w[tr].mean()
    Xva, yva = X[va], y[va]
    wva = w[va] / w[va].mean() if va.size else w[va]
    init = float(wtr @ ytr / wtr.sum())
    if np.ptp(y) == 0:
        return BoostedModel(trees=[], learning_rate=learning_rate, init=float(y[0]),
                            best_iter=0, features=features)
    exact = ytr.size <= exact_limit
    thresholds = [_candidate_thresholds(Xtr[:, f], exact, max_bins) for f in range(p)]
    codes = np.column_stack([np.searchsorted(thresholds[f], Xtr[:, f], side="left") for f in range(p)]).astype(np.int64)
    codes_va = (np.column_stack([np.searchsorted(thresholds[f], Xva[:, f], side="left") for f in range(p)]).astype(np.int64)
                if va.size else np.empty((0, p), dtype=np.int64))
    F = np.full(ytr.size, init)
    Fva = np.full(yva.size, init)
    train_loss = [float(wtr @ (ytr - F) ** 2 / wtr.sum())]
    val_loss = [float(wva @ (yva - Fva) ** 2 / wva.sum())] if va.size else []
    min_gain = 1e-12 * float(wtr @ (ytr - init) ** 2)
    trees = []
    best_iter, best_val = 0, val_loss[0] if va.size else np.inf
    for m in range(1, max_trees + 1):
        r = ytr - F
        ctree, leaf = _grow_tree(codes, thresholds, wtr, r, depth, min_leaf_weight, min_gain)
        if ctree.feature[0] < 0:
            break
        F += learning_rate * ctree.value[leaf]
        trees.append(ctree)
        train_loss.append(float(wtr @ (ytr - F) ** 2 / wtr.sum()))
        if va.size:
            Fva += learning_rate * _predict_codes(ctree, codes_va, thresholds)
            v = float(wva @ (yva - Fva) ** 2 / wva.sum())
            val_loss.append(v)
            if v < best_val:
                best_val, best_iter = v, m
            elif m - best_iter >= patience:
                break
        else:
            best_iter = m
    return BoostedModel(trees=trees[:best_iter], learning_rate=learning_rate, init=init,
                        best_iter=best_iter, features=features,
                        train_loss=train_loss, val_loss=val_loss)


def _predict_codes(tree, codes, thresholds):
    # bin index of each threshold: code <= b  <=>  x <= thresholds[f][b]
    node = np.zeros(codes.shape[0], dtype=np.int64)
    rows = np.arange(codes.shape[0])
    bidx = np.zeros(tree.feature.size, dtype=np.int64)
    for i, f in enumerate(tree.feature):
        if f >= 0:
            bidx[i] = np.searchsorted(thresholds[f], tree.threshold[i])
    for _ in range(tree.max_depth):
        f = tree.feature[node]
        internal = f >= 0
        if not internal.any():
            break
        go = codes[rows, np.where(internal, f, 0)] <= bidx[node]
        node = np.where(internal, np.where(go, tree.left[node], tree.right[node]), node)
    return tree.value[node]


def predict(model: BoostedModel, X) -> np.ndarray:
    return model.predict(X)


def with_treatment(X, t_value) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.column_stack([X, np.full(X.shape[0], float(t_value))])


def ite_predict(model: BoostedModel, X) -> np.ndarray:
    """Plug-in ITE: prediction at t=1 minus prediction at t=0."""
    if model.features[-1] != "t":
        raise SchemaMismatch("model was not trained with t as its last feature")
    return model.predict(with_treatment(X, 1)) - model.predict(with_treatment(X, 0))
