"""Straight-line reference implementations used as test oracles.

Everything here is written with exact rational arithmetic and explicit loops,
deliberately sharing no code with the package.
"""

from fractions import Fraction as F


def frac(x):
    return F(x) if not isinstance(x, F) else x


def mean(xs):
    xs = list(xs)
    return sum(xs, F(0)) / len(xs)


def quantile(values, p):
    # linear interpolation between order statistics at h = (n-1) p
    v = sorted(frac(x) for x in values)
    h = (len(v) - 1) * frac(p)
    lo = int(h)
    if lo + 1 >= len(v):
        return v[-1]
    return v[lo] + (h - lo) * (v[lo + 1] - v[lo])


def raw_difference(y, t):
    return mean(frac(a) for a, b in zip(y, t) if b) - mean(frac(a) for a, b in zip(y, t) if not b)


def strata(scores, t, J):
    """Stratum label per sample after the empty-stratum and empty-arm merge rules.

    Cut points: distinct pooled quantiles at k/J. A sample sits in the first
    stratum whose upper cut is >= its score. Cuts that leave a stratum with no
    samples are removed (the cut closing it, or the last cut for the top stratum).
    Then, repeatedly, the first stratum lacking an arm is merged into its
    neighbour: the only one at the ends, otherwise the one whose mean score is
    closer (left on ties).
    """
    s = [frac(x) for x in scores]
    cuts = sorted(set(quantile(s, F(k, J)) for k in range(1, J)))

    def label(x, cs):
        for k, c in enumerate(cs):
            if x <= c:
                return k
        return len(cs)

    def members(cs):
        groups = [[] for _ in range(len(cs) + 1)]
        for i, x in enumerate(s):
            groups[label(x, cs)].append(i)
        return groups

    while cuts:
        g = members(cuts)
        empty = [k for k, m in enumerate(g) if not m]
        if not empty:
            break
        k = empty[0]
        del cuts[k if k < len(cuts) else len(cuts) - 1]
    while cuts:
        g = members(cuts)
        bad = [k for k, m in enumerate(g) if all(t[i] for i in m) or not any(t[i] for i in m)]
        if not bad:
            break
        k = bad[0]
        if k == 0:
            other = 1
        elif k == len(g) - 1:
            other = k - 1
        else:
            mid = mean(s[i] for i in g[k])
            dl = abs(mid - mean(s[i] for i in g[k - 1]))
            dr = abs(mean(s[i] for i in g[k + 1]) - mid)
            other = k - 1 if dl <= dr else k + 1
        del cuts[min(k, other)]
    return [label(x, cuts) for x in s], cuts


def stratified_ate(y, t, scores, J):
    labels, cuts = strata(scores, t, J)
    n = len(y)
    total = F(0)
    for j in range(len(cuts) + 1):
        idx = [i for i in range(n) if labels[i] == j]
        yt = [frac(y[i]) for i in idx if t[i]]
        yc = [frac(y[i]) for i in idx if not t[i]]
        total += F(len(idx), n) * (mean(yt) - mean(yc))
    return total


def nearest(scores, t, i, caliper=None):
    """All opposite-arm samples at the minimum score distance from i."""
    s = [frac(x) for x in scores]
    pool = [l for l in range(len(s)) if t[l] != t[i]]
    d = min(abs(s[l] - s[i]) for l in pool)
    if caliper is not None and d > frac(caliper):
        return []
    return [l for l in pool if abs(s[l] - s[i]) == d]


def matched_ate(y, t, scores, caliper=None):
    y1, y0 = [], []
    for i in range(len(y)):
        nb = nearest(scores, t, i, caliper)
        if not nb:
            continue
        imputed = mean(frac(y[l]) for l in nb)
        own = frac(y[i])
        y1.append(own if t[i] else imputed)
        y0.append(imputed if t[i] else own)
    return mean(y1) - mean(y0)


def ipw_ate(y, t, scores, estimator="hajek"):
    w = [1 / frac(s) if b else 1 / (1 - frac(s)) for s, b in zip(scores, t)]
    st = sum((wi * frac(yi) for wi, yi, b in zip(w, y, t) if b), F(0))
    sc = sum((wi * frac(yi) for wi, yi, b in zip(w, y, t) if not b), F(0))
    if estimator == "ht":
        return (st - sc) / len(y)
    wt = sum((wi for wi, b in zip(w, t) if b), F(0))
    wc = sum((wi for wi, b in zip(w, t) if not b), F(0))
    return st / wt - sc / wc


def newton_logistic(X, t, iters=60):
    """Plain Newton-Raphson on the logistic log-likelihood with Gaussian
    elimination in floats; no step control. Intercept prepended."""
    import math

    rows = [[1.0] + list(map(float, r)) for r in X]
    p = len(rows[0])
    b = [0.0] * p
    for _ in range(iters):
        grad = [0.0] * p
        H = [[0.0] * p for _ in range(p)]
        for r, ti in zip(rows, t):
            eta = sum(bi * xi for bi, xi in zip(b, r))
            mu = 1.0 / (1.0 + math.exp(-eta))
            for a in range(p):
                grad[a] += (ti - mu) * r[a]
                for c in range(p):
                    H[a][c] += mu * (1 - mu) * r[a] * r[c]
        step = _gauss_solve(H, grad)
        b = [bi + si for bi, si in zip(b, step)]
        if max(abs(s) for s in step) < 1e-14:
            break
    return b


def _gauss_solve(A, v):
    n = len(v)
    M = [list(A[i]) + [v[i]] for i in range(n)]
    for c in range(n):
        piv = max(range(c, n), key=lambda r: abs(M[r][c]))
        M[c], M[piv] = M[piv], M[c]
        for r in range(n):
            if r != c:
                f = M[r][c] / M[c][c]
                for k in range(c, n + 1):
                    M[r][k] -= f * M[c][k]
    return [M[i][n] / M[i][i] for i in range(n)]
