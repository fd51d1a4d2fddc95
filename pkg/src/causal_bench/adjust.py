"""Group-level ATE estimators that adjust on a propensity proxy.

Stratification on pooled score quantiles, 1-NN matching on the score
(both directions, ties kept) and inverse propensity weighting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyArm, NoMatches, TooFewSamples, ZeroGroup


def ate_raw(y, t) -> float:
    y = np.asarray(y, dtype=float)
    t = np.asarray(t).astype(bool)
    if t.all() or not t.any():
        raise EmptyArm("need both treated and control samples")
    return float(y[t].mean() - y[~t].mean())


# -- stratification ---------------------------------------------------------

@dataclass(frozen=True)
class Stratification:
    boundaries: np.ndarray  # J-1 increasing cut points; x <= b_k goes below
    assignment: np.ndarray  # stratum id per sample, 0..J-1
    q: np.ndarray
    merges: list = field(default_factory=list)

    @property
    def J(self) -> int:
        return len(self.q)

    def table(self, t) -> list:
        t = np.asarray(t).astype(bool)
        rows = []
        for j in range(self.J):
            m = self.assignment == j
            rows.append({"stratum": j, "n": int(m.sum()), "n_treated": int((m & t).sum()),
                         "n_control": int((m & ~t).sum()), "q": float(self.q[j])})
        return rows


def _assign(scores, boundaries):
    return np.searchsorted(boundaries, scores, side="left")


def stratify(scores, t, J: int = 5) -> Stratification:
    scores = np.asarray(scores, dtype=float)
    t = np.asarray(t).astype(bool)
    if J < 1:
        raise ValueError("J must be >= 1")
    if t.all() or not t.any():
        raise TooFewSamples("need both treated and control samples to stratify")
    cuts = np.unique(np.quantile(scores, np.arange(1, J) / J)) if J > 1 else np.empty(0)
    cuts = list(cuts)
    merges = []

    def counts(bounds):
        a = _assign(scores, np.asarray(bounds))
        k = len(bounds) + 1
        nt = np.bincount(a[t], minlength=k)
        nc = np.bincount(a[~t], minlength=k)
        return a, nt, nc

    # drop cut points that leave a stratum with no samples at all
    a, nt, nc = counts(cuts)
    while len(cuts) and np.any(nt + nc == 0):
        j = int(np.flatnonzero(nt + nc == 0)[0])
        cuts.pop(min(j, len(cuts) - 1))
        a, nt, nc = counts(cuts)

    while len(cuts) and np.any((nt == 0) | (nc == 0)):
        j = int(np.flatnonzero((nt == 0) | (nc == 0))[0])
        k = len(cuts) + 1
        if j == 0:
            nb = 1
        elif j == k - 1:
            nb = j - 1
        else:
            mid = scores[a == j].mean()
            left = abs(mid - scores[a == j - 1].mean())
            right = abs(scores[a == j + 1].mean() - mid)
            nb = j - 1 if left <= right else j + 1
        merges.append({"stratum": j, "into": nb,
                       "n_treated": int(nt[j]), "n_control": int(nc[j])})
        cuts.pop(min(j, nb))
        a, nt, nc = counts(cuts)

    n = len(scores)
    q = (nt + nc) / n
    return Stratification(boundaries=np.asarray(cuts, dtype=float), assignment=a, q=q, merges=merges)


def ate_stratified(y, t, strat: Stratification) -> float:
    y = np.asarray(y, dtype=float)
    t = np.asarray(t).astype(bool)
    total = 0.0
    for j in range(strat.J):
        m = strat.assignment == j
        yt, yc = y[m & t], y[m & ~t]
        if yt.size == 0 or yc.size == 0:
            raise EmptyArm(f"stratum {j} lacks a treatment arm")
        total += strat.q[j] * (yt.mean() - yc.mean())
    return float(total)


# -- matching ---------------------------------------------------------------

@dataclass(frozen=True)
class MatchSet:
    """Neighbour sets stored as ranges into per-arm reference orderings.

    A sample i of arm a matches ``ref[a][lo[i]:hi[i]]``; ``ref[True]`` lists
    control ids (the pool for treated queries) and ``ref[False]`` treated ids.
    Ranges keep memory linear when clipped scores produce large tie groups.
    """

    t: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    ref: dict
    caliper: float | None = None

    @property
    def retained(self) -> np.ndarray:
        return self.hi > self.lo

    @property
    def counts(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def retained_fraction(self) -> float:
        return float(self.retained.mean())

    def neighbors(self, i: int) -> np.ndarray:
        return np.sort(self.ref[bool(self.t[i])][self.lo[i]:self.hi[i]])

    def neighbor_mean(self, y) -> np.ndarray:
        """Mean of y over each sample's neighbours (0 for dropped samples)."""
        y = np.asarray(y, dtype=float)
        out = np.zeros(y.size)
        for arm in (True, False):
            q = np.flatnonzero(self.t == arm)
            csum = np.concatenate([[0.0], np.cumsum(y[self.ref[arm]])])
            c = self.counts[q]
            s = csum[self.hi[q]] - csum[self.lo[q]]
            out[q] = np.divide(s, c, out=np.zeros_like(s), where=c > 0)
        return out

    def usage_weights(self) -> np.ndarray:
        """Row weights of the matched dataset: every retained sample once, plus
        1/N(J(i)) each time it appears in some J(i)."""
        n = self.t.size
        w = self.retained.astype(float)
        for arm in (True, False):
            q = np.flatnonzero((self.t == arm) & self.retained)
            share = 1.0 / self.counts[q]
            diff = np.zeros(self.ref[arm].size + 1)
            np.add.at(diff, self.lo[q], share)
            np.add.at(diff, self.hi[q], -share)
            w[self.ref[arm]] += np.cumsum(diff)[:-1]
        return w

    def summary(self) -> dict:
        c = self.counts[self.retained]
        return {"retained_fraction": self.retained_fraction,
                "mean_matches": float(c.mean()) if c.size else 0.0,
                "max_matches": int(c.max()) if c.size else 0,
                "caliper": self.caliper}


def _nn_ranges(query, ref_sorted):
    """For each query value, the contiguous [lo, hi) slice of ref_sorted holding
    every element at the minimum absolute distance."""
    m = ref_sorted.size
    pos = np.searchsorted(ref_sorted, query, side="left")
    has_right = pos < m
    has_left = pos > 0
    vr = ref_sorted[np.minimum(pos, m - 1)]
    vl = ref_sorted[np.maximum(pos - 1, 0)]
    dr = np.where(has_right, vr - query, np.inf)
    dl = np.where(has_left, query - vl, np.inf)
    dmin = np.minimum(dl, dr)
    lo = np.where(dl == dmin, np.searchsorted(ref_sorted, vl, side="left"), pos)
    hi = np.where(dr == dmin, np.searchsorted(ref_sorted, vr, side="right"), pos)
    return lo, hi, dmin


def match_1nn(scores, t, with_replacement: bool = True, caliper: float | None = None) -> MatchSet:
    """Nearest opposite-arm neighbour(s) on the score for every sample."""
    scores = np.asarray(scores, dtype=float)
    t = np.asarray(t).astype(bool)
    if t.all() or not t.any():
        raise NoMatches("both treatment arms must be nonempty")
    if not with_replacement:
        return _match_without_replacement(scores, t, caliper)
    n = scores.size
    lo = np.zeros(n, dtype=np.int64)
    hi = np.zeros(n, dtype=np.int64)
    ref = {}
    for arm in (True, False):
        pool = np.flatnonzero(t != arm)
        ref[arm] = pool[np.argsort(scores[pool], kind="stable")]
        q = np.flatnonzero(t == arm)
        l, h, d = _nn_ranges(scores[q], scores[ref[arm]])
        if caliper is not None:
            h = np.where(d <= caliper, h, l)
        lo[q], hi[q] = l, h
    return MatchSet(t=t, lo=lo, hi=hi, ref=ref, caliper=caliper)


def _match_without_replacement(scores, t, caliper):
    # greedy 1:1 pairing in ascending score order; O(n^2), meant for small n
    n = scores.size
    free = np.ones(n, dtype=bool)
    partner = np.full(n, -1)
    for i in np.argsort(scores, kind="stable"):
        if not free[i]:
            continue
        cand = np.flatnonzero(free & (t != t[i]))
        if cand.size == 0:
            continue
        d = np.abs(scores[cand] - scores[i])
        if caliper is not None and d.min() > caliper:
            continue
        j = cand[np.argmin(d)]
        partner[i], partner[j] = j, i
        free[i] = free[j] = False
    lo = np.zeros(n, dtype=np.int64)
    hi = np.zeros(n, dtype=np.int64)
    ref = {}
    for arm in (True, False):
        q = np.flatnonzero((t == arm) & (partner >= 0))
        ref[arm] = partner[q]
        lo[q] = np.arange(q.size)
        hi[q] = lo[q] + 1
    return MatchSet(t=t, lo=lo, hi=hi, ref=ref, caliper=caliper)


def ate_matched(y, t, ms: MatchSet) -> float:
    y = np.asarray(y, dtype=float)
    t = np.asarray(t).astype(bool)
    keep = ms.retained
    if not keep.any():
        raise NoMatches("no sample retained")
    nb_mean = ms.neighbor_mean(y)
    y1 = np.where(t, y, nb_mean)[keep]
    y0 = np.where(t, nb_mean, y)[keep]
    return float(y1.mean() - y0.mean())


# -- weighting --------------------------------------------------------------

@dataclass(frozen=True)
class WeightVector:
    raw: np.ndarray
    normalized: np.ndarray  # raw weights divided by their arm's total
    mode: str = "group"

    @property
    def values(self) -> np.ndarray:
        return self.normalized if self.mode == "group" else self.raw

    def summary(self) -> dict:
        w = self.raw
        counts, edges = np.histogram(np.log10(w), bins=10)
        return {"min": float(w.min()), "max": float(w.max()), "mean": float(w.mean()),
                "quantiles": [float(v) for v in np.quantile(w, [0.01, 0.25, 0.5, 0.75, 0.99])],
                "ess": float(w.sum() ** 2 / np.sum(w ** 2)),
                "histogram": {"counts": counts.tolist(), "edges": edges.tolist()}}


def ipw_weights(scores, t, mode: str = "group") -> WeightVector:
    if mode not in ("group", "none"):
        raise ValueError(f"unknown normalization mode {mode!r}")
    scores = np.asarray(scores, dtype=float)
    tb = np.asarray(t).astype(bool)
    raw = np.where(tb, 1.0 / scores, 1.0 / (1.0 - scores))
    norm = raw.copy()
    for arm in (True, False):
        s = raw[tb == arm].sum()
        if s > 0:
            norm[tb == arm] /= s
    return WeightVector(raw=raw, normalized=norm, mode=mode)


def ate_ipw(y, t, w, estimator: str = "hajek") -> float:
    """Hajek (default) or Horvitz-Thompson IPW estimate of the ATE."""
    y = np.asarray(y, dtype=float)
    tb = np.asarray(t).astype(bool)
    raw = w.raw if isinstance(w, WeightVector) else np.asarray(w, dtype=float)
    if estimator == "ht":
        n = y.size
        return float((np.sum(raw[tb] * y[tb]) - np.sum(raw[~tb] * y[~tb])) / n)
    if estimator != "hajek":
        raise ValueError(f"unknown estimator {estimator!r}")
    wt, wc = raw[tb], raw[~tb]
    if wt.sum() <= 0 or wc.sum() <= 0:
        raise ZeroGroup("zero total weight in a treatment arm")
    return float(wt @ y[tb] / wt.sum() - wc @ y[~tb] / wc.sum())
