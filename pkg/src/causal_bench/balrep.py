"""Small counterfactual-regression network with a linear-MMD balance penalty.

Shared representation Phi(x) (dense + tanh layers), one outcome head per
treatment arm, and objective

    mean_i (y_i - h_{t_i}(Phi(x_i)))^2 + alpha * ||mean Phi(X_t) - mean Phi(X_c)||^2

trained by plain mini-batch gradient descent. Backpropagation is written out
by hand so the gradient can be checked against finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyArm, NonFinite, SchemaMismatch

ACTIVATIONS = {
    "tanh": (np.tanh, lambda a, z: 1.0 - z * z),
    "linear": (lambda a: a, lambda a, z: np.ones_like(z)),
}


def mmd_linear(rep_t, rep_c) -> float:
    rep_t = np.asarray(rep_t, dtype=float)
    rep_c = np.asarray(rep_c, dtype=float)
    if rep_t.shape[0] == 0 or rep_c.shape[0] == 0:
        raise EmptyArm("both groups must be nonempty")
    if rep_t.shape[1:] != rep_c.shape[1:]:
        raise SchemaMismatch("representation widths differ")
    d = rep_t.mean(axis=0) - rep_c.mean(axis=0)
    return float(d @ d)


@dataclass
class CFRConfig:
    alpha: float = 1.0
    epochs: int = 300
    batch_size: int = 256
    step_size: float = 1e-2
    rep_layers: tuple = (32, 32)
    head_layers: tuple = (16,)
    activation: str = "tanh"
    seed: int = 0
    # outcome rescaled to unit variance; covariates left on their own scale by
    # default, since rescaling sharpens the sigmoid steps the net has to fit
    standardize_y: bool = True
    standardize_x: bool = False
    precision: str = "float32"  # training arithmetic; the reference objective is float64


@dataclass
class RepNet:
    params: dict
    rep_layers: tuple
    head_layers: tuple
    activation: str = "tanh"
    alpha: float = 1.0
    seed: int = 0
    x_mean: np.ndarray | None = None
    x_scale: np.ndarray | None = None
    y_mean: float = 0.0
    y_scale: float = 1.0
    trace: list = field(default_factory=list, repr=False)

    @classmethod
    def init(cls, n_inputs: int, rep_layers=(32, 32), head_layers=(16,), activation="tanh",
             alpha=1.0, seed=0, zero_heads=False) -> "RepNet":
        rng = np.random.Generator(np.random.Philox(seed))
        params = {}
        sizes = [n_inputs, *rep_layers]
        for k in range(len(rep_layers)):
            bound = np.sqrt(6.0 / (sizes[k] + sizes[k + 1]))
            params[f"rep_W{k}"] = rng.uniform(-bound, bound, (sizes[k], sizes[k + 1]))
            params[f"rep_b{k}"] = np.zeros(sizes[k + 1])
        hsizes = [sizes[-1], *head_layers, 1]
        for arm in (0, 1):
            for k in range(len(hsizes) - 1):
                bound = np.sqrt(6.0 / (hsizes[k] + hsizes[k + 1]))
                W = rng.uniform(-bound, bound, (hsizes[k], hsizes[k + 1]))
                params[f"h{arm}_W{k}"] = np.zeros_like(W) if zero_heads else W
                params[f"h{arm}_b{k}"] = np.zeros(hsizes[k + 1])
        return cls(params=params, rep_layers=tuple(rep_layers), head_layers=tuple(head_layers),
                   activation=activation, alpha=alpha, seed=seed)

    @property
    def n_inputs(self) -> int:
        return self.params["rep_W0"].shape[0] if self.rep_layers else 0

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def _scale_x(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_inputs:
            raise SchemaMismatch(f"expected {self.n_inputs} input columns, got {X.shape}")
        if self.x_mean is not None:
            X = (X - self.x_mean) / self.x_scale
        return X

    def represent(self, X) -> np.ndarray:
        return _forward_rep(self.params, self._scale_x(X), self.activation, len(self.rep_layers))[-1]

    def to_dict(self) -> dict:
        return {
            "params": {k: v.tolist() for k, v in self.params.items()},
            "rep_layers": list(self.rep_layers), "head_layers": list(self.head_layers),
            "activation": self.activation, "alpha": self.alpha, "seed": self.seed,
            "x_mean": None if self.x_mean is None else self.x_mean.tolist(),
            "x_scale": None if self.x_scale is None else self.x_scale.tolist(),
            "y_mean": self.y_mean, "y_scale": self.y_scale,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RepNet":
        return cls(
            params={k: np.asarray(v, dtype=float) for k, v in d["params"].items()},
            rep_layers=tuple(d["rep_layers"]), head_layers=tuple(d["head_layers"]),
            activation=d["activation"], alpha=d["alpha"], seed=d["seed"],
            x_mean=None if d["x_mean"] is None else np.asarray(d["x_mean"]),
            x_scale=None if d["x_scale"] is None else np.asarray(d["x_scale"]),
            y_mean=d["y_mean"], y_scale=d["y_scale"],
        )


def _forward_rep(params, X, activation, n_layers):
    act = ACTIVATIONS[activation][0]
    zs = [X]
    for k in range(n_layers):
        zs.append(act(zs[-1] @ params[f"rep_W{k}"] + params[f"rep_b{k}"]))
    return zs


def _forward_head(params, arm, R, activation, n_layers):
    act = ACTIVATIONS[activation][0]
    zs = [R]
    for k in range(n_layers):
        zs.append(act(zs[-1] @ params[f"h{arm}_W{k}"] + params[f"h{arm}_b{k}"]))
    out = zs[-1] @ params[f"h{arm}_W{n_layers}"] + params[f"h{arm}_b{n_layers}"]
    return zs, out[:, 0]


def objective(params, X, t, y, alpha, activation="tanh", n_rep=2, n_head=1, grad=True):
    """Returns (total, factual, imbalance, grads-or-None) on the given rows."""
    dact = ACTIVATIONS[activation][1]
    t = np.asarray(t).astype(bool)
    n = X.shape[0]
    zs = _forward_rep(params, X, activation, n_rep)
    R = zs[-1]
    grads = {k: np.zeros_like(v) for k, v in params.items()} if grad else None
    dR = np.zeros_like(R) if grad else None
    factual = 0.0
    for arm, mask in ((1, t), (0, ~t)):
        if not mask.any():
            continue
        hz, out = _forward_head(params, arm, R[mask], activation, n_head)
        err = out - y[mask]
        factual += float(err @ err) / n
        if not grad:
            continue
        g = (2.0 / n) * err[:, None]
        grads[f"h{arm}_W{n_head}"] += hz[-1].T @ g
        grads[f"h{arm}_b{n_head}"] += g.sum(axis=0)
        g = g @ params[f"h{arm}_W{n_head}"].T
        for k in range(n_head - 1, -1, -1):
            g = g * dact(None, hz[k + 1])
            grads[f"h{arm}_W{k}"] += hz[k].T @ g
            grads[f"h{arm}_b{k}"] += g.sum(axis=0)
            g = g @ params[f"h{arm}_W{k}"].T
        dR[mask] += g
    imbalance = 0.0
    if alpha != 0 and t.any() and (~t).any():
        nt, nc = t.sum(), (~t).sum()
        diff = R[t].mean(axis=0) - R[~t].mean(axis=0)
        imbalance = float(diff @ diff)
        if grad:
            gd = 2.0 * alpha * diff
            dR[t] += gd / nt
            dR[~t] -= gd / nc
    total = factual + alpha * imbalance
    if grad:
        g = dR
        for k in range(n_rep - 1, -1, -1):
            g = g * dact(None, zs[k + 1])
            grads[f"rep_W{k}"] += zs[k].T @ g
            grads[f"rep_b{k}"] += g.sum(axis=0)
            if k:
                g = g @ params[f"rep_W{k}"].T
    return total, factual, imbalance, grads


def _canonical_order(X, t, y):
    # batches keyed to row content so that permuting the input changes nothing
    keys = [y, t] + [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    return np.lexsort(keys[::-1])


class _PackedNet:
    """Training-time layout of the parameters in one flat buffer.

    Both heads are evaluated together: the first head layer concatenates the
    two arms' weights column-wise and deeper head layers are block diagonal
    (off-diagonal gradient blocks masked to zero). Each step is a handful of
    large array operations and a single in-place update, which matters
    because a step on a 256-row batch is dominated by per-call overhead.
    """

    def __init__(self, params, n_rep, n_head, activation, dtype=np.float64):
        self.n_rep, self.n_head = n_rep, n_head
        self.act, self.dact = ACTIVATIONS[activation]
        shapes = []
        for k in range(n_rep):
            shapes += [(f"rep_W{k}", params[f"rep_W{k}"].shape), (f"rep_b{k}", params[f"rep_b{k}"].shape)]
        for k in range(n_head + 1):
            a, b = params[f"h1_W{k}"].shape
            shapes += [(f"W{k}", (a if k == 0 else 2 * a, 2 * b)), (f"b{k}", (2 * b,))]
        size = sum(int(np.prod(sh)) for _, sh in shapes)
        self.theta = np.zeros(size, dtype=dtype)
        self.grad = np.zeros(size, dtype=dtype)
        self.p, self.g = {}, {}
        off = 0
        for name, sh in shapes:
            m = int(np.prod(sh))
            self.p[name] = self.theta[off:off + m].reshape(sh)
            self.g[name] = self.grad[off:off + m].reshape(sh)
            off += m
        self.masks = {}
        for k in range(n_rep):
            self.p[f"rep_W{k}"][...] = params[f"rep_W{k}"]
            self.p[f"rep_b{k}"][...] = params[f"rep_b{k}"]
        for k in range(n_head + 1):
            a, b = params[f"h1_W{k}"].shape
            W = self.p[f"W{k}"]
            if k == 0:
                W[:, :b], W[:, b:] = params[f"h1_W{k}"], params[f"h0_W{k}"]
            else:
                W[:a, :b], W[a:, b:] = params[f"h1_W{k}"], params[f"h0_W{k}"]
                mask = np.zeros(W.shape, dtype=dtype)
                mask[:a, :b] = mask[a:, b:] = 1.0
                self.masks[f"W{k}"] = mask
            self.p[f"b{k}"][:b], self.p[f"b{k}"][b:] = params[f"h1_b{k}"], params[f"h0_b{k}"]

    def unpack(self, params):
        for k in range(self.n_rep):
            params[f"rep_W{k}"] = self.p[f"rep_W{k}"].astype(float)
            params[f"rep_b{k}"] = self.p[f"rep_b{k}"].astype(float)
        for k in range(self.n_head + 1):
            a, b = params[f"h1_W{k}"].shape
            W, bias = self.p[f"W{k}"], self.p[f"b{k}"]
            params[f"h1_W{k}"] = W[:a, :b].astype(float)
            params[f"h0_W{k}"] = (W[:, b:] if k == 0 else W[a:, b:]).astype(float)
            params[f"h1_b{k}"], params[f"h0_b{k}"] = bias[:b].astype(float), bias[b:].astype(float)
        return params

    def _layer(self, a, W, b):
        z = a @ W
        z += b
        if self.act is np.tanh:
            return np.tanh(z, out=z)
        return self.act(z)

    def step(self, X, arms, y, alpha, step_size):
        """arms is the (batch, 2) indicator [t, 1 - t]; returns (factual, imbalance)."""
        p, g_ = self.p, self.g
        n = X.shape[0]
        zs = [X]
        for k in range(self.n_rep):
            zs.append(self._layer(zs[-1], p[f"rep_W{k}"], p[f"rep_b{k}"]))
        R = zs[-1]
        hz = [R]
        for k in range(self.n_head):
            hz.append(self._layer(hz[-1], p[f"W{k}"], p[f"b{k}"]))
        L = self.n_head
        err = hz[-1] @ p[f"W{L}"] + p[f"b{L}"]
        err -= y[:, None]
        err *= arms
        factual = float(np.vdot(err, err)) / n
        g = err * (2.0 / n)
        # column sums through BLAS; ufunc reductions are slow on narrow blocks
        ones = np.ones(n, dtype=g.dtype)
        for k in range(L, -1, -1):
            np.matmul(hz[k].T, g, out=g_[f"W{k}"])
            np.matmul(ones, g, out=g_[f"b{k}"])
            if k in self.masks:
                g_[f"W{k}"] *= self.masks[f"W{k}"]
            g = g @ p[f"W{k}"].T
            if k:
                g *= self.dact(None, hz[k])
        nt = ones @ arms[:, 0]
        imbalance = 0.0
        if alpha != 0 and 0 < nt < n:
            c = arms[:, 0] / nt - arms[:, 1] / (n - nt)
            diff = c @ R
            imbalance = float(diff @ diff)
            g += np.outer(c, (2.0 * alpha) * diff)
        for k in range(self.n_rep - 1, -1, -1):
            g *= self.dact(None, zs[k + 1])
            np.matmul(zs[k].T, g, out=g_[f"rep_W{k}"])
            np.matmul(ones, g, out=g_[f"rep_b{k}"])
            if k:
                g = g @ p[f"rep_W{k}"].T
        self.theta -= step_size * self.grad
        return factual, imbalance


def sgd_step(params, X, t, y, alpha, step_size, activation="tanh", n_rep=2, n_head=1):
    """One gradient step on a batch, updating ``params`` in place.

    Returns (total, factual, imbalance) evaluated before the step.
    """
    net = _PackedNet(params, n_rep, n_head, activation)
    tf = np.asarray(t, dtype=float)
    factual, imbalance = net.step(np.asarray(X, dtype=float), np.column_stack([tf, 1.0 - tf]),
                                  np.asarray(y, dtype=float), alpha, step_size)
    net.unpack(params)
    return factual + alpha * imbalance, factual, imbalance


def fit_cfr(X, t, y, cfg: CFRConfig | None = None, **overrides) -> RepNet:
    """Train by mini-batch gradient descent.

    The trace holds, per epoch, the mean minibatch factual loss, imbalance and
    total objective (epoch 0 is the full-data objective at initialisation).
    Losses are on the standardized outcome scale when ``standardize_y`` is set.
    """
    cfg = cfg or CFRConfig()
    unknown = set(overrides) - set(CFRConfig.__dataclass_fields__)
    if unknown:
        raise TypeError(f"unknown CFR options {sorted(unknown)}")
    cfg = replace(cfg, **overrides)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    t = np.asarray(t).astype(bool)
    n = X.shape[0]
    if t.all() or not t.any():
        raise EmptyArm("both treatment arms are required")
    if n < cfg.batch_size:
        raise ValueError(f"n={n} is smaller than the batch size {cfg.batch_size}")
    net = RepNet.init(X.shape[1], cfg.rep_layers, cfg.head_layers, cfg.activation, cfg.alpha, cfg.seed)
    if cfg.standardize_x:
        sd = X.std(axis=0)
        net.x_mean, net.x_scale = X.mean(axis=0), np.where(sd > 0, sd, 1.0)
    if cfg.standardize_y:
        net.y_mean, net.y_scale = float(y.mean()), float(y.std()) or 1.0
    Xs = net._scale_x(X)
    ys = (y - net.y_mean) / net.y_scale
    order = _canonical_order(Xs, t, ys)
    Xs, ts, ys = Xs[order], t[order], ys[order]
    nr, nh = len(cfg.rep_layers), len(cfg.head_layers)
    rng = np.random.Generator(np.random.Philox(cfg.seed + 1))
    tot, fac, imb, _ = objective(net.params, Xs, ts, ys, cfg.alpha, cfg.activation, nr, nh, grad=False)
    net.trace.append({"epoch": 0, "factual": fac, "imbalance": imb, "total": tot})
    n_batches = n // cfg.batch_size
    # float32 tanh/matmul are several times cheaper than float64
    dt = np.dtype(cfg.precision)
    packed = _PackedNet(net.params, nr, nh, cfg.activation, dt)
    tf = ts.astype(dt)
    arms = np.column_stack([tf, 1.0 - tf])
    Xs32, ys32 = Xs.astype(dt), ys.astype(dt)
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        Xe, ae, ye = Xs32[perm], arms[perm], ys32[perm]
        fac = imb = 0.0
        for s in range(n_batches):
            b = slice(s * cfg.batch_size, (s + 1) * cfg.batch_size)
            f_b, i_b = packed.step(Xe[b], ae[b], ye[b], cfg.alpha, cfg.step_size)
            fac += f_b
            imb += i_b
        fac /= n_batches
        imb /= n_batches
        tot = fac + cfg.alpha * imb
        if not np.isfinite(tot):
            raise NonFinite(f"objective became non-finite at epoch {epoch}")
        net.trace.append({"epoch": epoch, "factual": fac, "imbalance": imb, "total": tot})
    packed.unpack(net.params)
    return net


def predict_po(net: RepNet, X) -> tuple:
    R = net.represent(X)
    nh = len(net.head_layers)
    out = []
    for arm in (0, 1):
        _, o = _forward_head(net.params, arm, R, net.activation, nh)
        out.append(net.y_mean + net.y_scale * o)
    return out[0], out[1]


def flatten(params: dict) -> np.ndarray:
    return np.concatenate([params[k].ravel() for k in sorted(params)])


def unflatten(vec, like: dict) -> dict:
    out, i = {}, 0
    for k in sorted(like):
        size = like[k].size
        out[k] = np.asarray(vec[i:i + size]).reshape(like[k].shape)
        i += size
    return out


def trace_csv(net: RepNet) -> str:
    lines = ["epoch,factual,imbalance,total"]
    for r in net.trace:
        lines.append(f"{r['epoch']},{r['factual']!r},{r['imbalance']!r},{r['total']!r}")
    return "\n".join(lines) + "\n"
