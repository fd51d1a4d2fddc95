"""Monte-Carlo checks of the proxy-adjustment error decompositions in a linear SEM.

Outcome model E[y(t) | C=c] = gamma + tau*t + beta*c. Treatment is logistic
in C (and in NC when NC is instrument-like). Adjusting by stratifying on a
proxy P of the propensity leaves the error

    Delta_D   = beta * (mean C_t - mean C_c)                      (no adjustment)
    Delta_FAP = beta * sum_j q(j) [mean C_t(j) - mean C_c(j)]     (strata of P)

and including a non-confounder NC in the proxy replaces the inner bracket by
sum_nc q(nc, j) [mean C_t(j|nc) - mean C_c(j|nc)].
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .adjust import ate_raw, ate_stratified, stratify
from .errors import ConfigError, EmptyArm
from .propensity import fit_logistic

NC_KINDS = ("adjustment", "instrument", "mediator", "collider")


@dataclass(frozen=True)
class LinearSEMSpec:
    gamma: float = 0.0
    tau: float = 1.0
    beta: float = 1.0
    # treatment logit: treat_c*C (+ treat_nc*NC for instrument-like NC)
    treat_c: float = 1.0
    treat_nc: float = 1.0
    nc_kind: str = "adjustment"
    nc_t: float = 1.0  # t -> NC (mediator, collider)
    nc_y: float = 1.0  # NC -> y (adjustment, mediator) or y -> NC (collider)
    noise_y: float = 1.0
    noise_nc: float = 1.0
    # structural proxy coefficients; None derives them from the assignment model
    alpha0: float | None = None
    alpha1: float | None = None
    alpha2: float | None = None

    def validate(self) -> "LinearSEMSpec":
        if self.nc_kind not in NC_KINDS:
            raise ConfigError(f"unknown NC kind {self.nc_kind!r}")
        vals = [v for v in asdict(self).values() if isinstance(v, (int, float))]
        if not all(math.isfinite(v) for v in vals):
            raise ConfigError("all coefficients must be finite")
        return self

    def proxy_coefs(self) -> tuple:
        a0 = self.treat_c if self.alpha0 is None else self.alpha0
        a1 = self.treat_c if self.alpha1 is None else self.alpha1
        if self.alpha2 is not None:
            a2 = self.alpha2
        else:
            a2 = self.treat_nc if self.nc_kind == "instrument" else 0.0
        return a0, a1, a2


@dataclass(frozen=True)
class SEMSample:
    C: np.ndarray
    NC: np.ndarray
    t: np.ndarray
    y: np.ndarray
    spec: LinearSEMSpec


def simulate(spec: LinearSEMSpec, n: int, seed: int = 0) -> SEMSample:
    spec.validate()
    rng = np.random.Generator(np.random.Philox(seed))
    C = rng.standard_normal(n)
    e_nc = rng.standard_normal(n)
    e_y = rng.standard_normal(n)
    u = rng.random(n)
    kind = spec.nc_kind
    NC = spec.noise_nc * e_nc
    logit = spec.treat_c * C
    if kind == "instrument":
        logit = logit + spec.treat_nc * NC
    t = (u < 1.0 / (1.0 + np.exp(-logit))).astype(np.int8)
    direct = spec.tau
    if kind == "mediator":
        NC = spec.nc_t * t + NC
        direct = spec.tau - spec.nc_t * spec.nc_y  # total effect stays tau
    y = spec.gamma + direct * t + spec.beta * C + spec.noise_y * e_y
    if kind in ("adjustment", "mediator"):
        y = y + spec.nc_y * NC
    if kind == "collider":
        NC = spec.nc_t * t + spec.nc_y * y + NC
    return SEMSample(C=C, NC=NC, t=t, y=y, spec=spec)


def proxy(s: SEMSample, with_nc: bool, kind: str = "fitted") -> tuple:
    """Proxy values and their (C, NC) coefficients.

    "structural" uses the alpha coefficients of the SEM; "fitted" uses the linear
    predictor of a logistic propensity fit (intercept dropped, it does not
    change quantile strata).
    """
    if kind == "structural":
        a0, a1, a2 = s.spec.proxy_coefs()
        if with_nc:
            return a1 * s.C + a2 * s.NC, (a1, a2)
        return a0 * s.C, (a0, 0.0)
    if kind != "fitted":
        raise ValueError(f"unknown proxy kind {kind!r}")
    X = np.column_stack([s.C, s.NC]) if with_nc else s.C[:, None]
    fit = fit_logistic(X, s.t)
    coef = fit.coef[1:]
    P = X @ coef
    return P, (float(coef[0]), float(coef[1]) if with_nc else 0.0)


@dataclass(frozen=True)
class DeltaEstimate:
    empirical: float  # realised estimator error on this sample
    closed_form: float  # the decomposition evaluated on the same sample


def _arm_gap(x, t):
    return float(x[t].mean() - x[~t].mean())


def delta_d(s: SEMSample) -> DeltaEstimate:
    t = s.t.astype(bool)
    if t.all() or not t.any():
        raise EmptyArm("need both treatment arms")
    return DeltaEstimate(empirical=ate_raw(s.y, t) - s.spec.tau,
                         closed_form=s.spec.beta * _arm_gap(s.C, t))


def _stratified_gap(x, t, strat):
    total = 0.0
    for j in range(strat.J):
        m = strat.assignment == j
        total += strat.q[j] * _arm_gap(x[m], t[m])
    return float(total)


def delta_fap(s: SEMSample, J: int = 10, proxy_kind: str = "fitted") -> DeltaEstimate:
    t = s.t.astype(bool)
    P, _ = proxy(s, with_nc=False, kind=proxy_kind)
    strat = stratify(P, t, J)
    return DeltaEstimate(empirical=ate_stratified(s.y, t, strat) - s.spec.tau,
                         closed_form=s.spec.beta * _stratified_gap(s.C, t, strat))


@dataclass(frozen=True)
class NCDelta:
    empirical: float  # error of the ATE stratified on the NC-world proxy
    closed_form: float  # beta * sum_j q(j) sum_nc q(nc,j) [C_t(j|nc) - C_c(j|nc)]
    dropped_mass: float  # share of samples in (j, nc) cells lacking an arm
    conf_nc_residual: float  # mass-weighted |(P(j) - a2*nc)/a1 - mean C| over cells
    conf_nc_scale: float  # mass-weighted within-stratum spread of P/a1, for reference


def _nc_bins(nc, bins):
    cuts = np.unique(np.quantile(nc, np.arange(1, bins) / bins))
    return np.searchsorted(cuts, nc, side="left"), len(cuts) + 1


def delta_fap_nc(s: SEMSample, J: int = 10, nc_bins: int = 10,
                 proxy_kind: str = "fitted") -> NCDelta:
    t = s.t.astype(bool)
    P, (a1, a2) = proxy(s, with_nc=True, kind=proxy_kind)
    strat = stratify(P, t, J)
    empirical = ate_stratified(s.y, t, strat) - s.spec.tau
    b, nb = _nc_bins(s.NC, nc_bins)
    n = t.size
    cell = strat.assignment * nb + b
    k = strat.J * nb
    cnt = np.bincount(cell, minlength=k)
    nt = np.bincount(cell, weights=t, minlength=k)
    sum_ct = np.bincount(cell, weights=s.C * t, minlength=k)
    sum_cc = np.bincount(cell, weights=s.C * ~t, minlength=k)
    sum_c = sum_ct + sum_cc
    sum_nc = np.bincount(cell, weights=s.NC, minlength=k)
    nc_ = cnt - nt
    ok = (nt > 0) & (nc_ > 0)
    gap = np.zeros(k)
    gap[ok] = sum_ct[ok] / nt[ok] - sum_cc[ok] / nc_[ok]
    # q(j) * q(nc, j) = N(j, nc) / N
    closed = s.spec.beta * float(np.sum(cnt[ok] * gap[ok]) / n)
    dropped = float(cnt[~ok].sum() / n)

    Pj = np.bincount(strat.assignment, weights=P, minlength=strat.J) / np.maximum(
        np.bincount(strat.assignment, minlength=strat.J), 1)
    nonempty = cnt > 0
    jj = np.arange(k) // nb
    nc_mean = sum_nc[nonempty] / cnt[nonempty]
    c_mean = sum_c[nonempty] / cnt[nonempty]
    if a1 != 0:
        analytic = (Pj[jj[nonempty]] - a2 * nc_mean) / a1
        resid = float(np.sum(cnt[nonempty] * np.abs(analytic - c_mean)) / n)
        spread = np.array([np.ptp(P[strat.assignment == j]) for j in range(strat.J)])
        scale = float(np.sum(strat.q * spread) / abs(a1))
    else:
        resid = scale = float("nan")
    return NCDelta(empirical=empirical, closed_form=closed, dropped_mass=dropped,
                   conf_nc_residual=resid, conf_nc_scale=scale)


@dataclass(frozen=True)
class ColliderDelta:
    empirical: float
    imbalance_part: float  # the NC double sum with Z in the role of NC
    tau_prime_part: float  # sum_j q(j) tau'(j)
    tau_prime: np.ndarray


def _t_coef(y, t, C):
    X = np.column_stack([np.ones_like(C), t, C])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return float(coef[1])


def collider_bias(s: SEMSample, J: int = 10, nc_bins: int = 10,
                  proxy_kind: str = "fitted") -> ColliderDelta:
    """tau'(j) is the within-stratum shift of the t coefficient of y ~ (1, t, C)."""
    t = s.t.astype(bool)
    base = delta_fap_nc(s, J, nc_bins, proxy_kind)
    P, _ = proxy(s, with_nc=True, kind=proxy_kind)
    strat = stratify(P, t, J)
    tp = np.empty(strat.J)
    for j in range(strat.J):
        m = strat.assignment == j
        tp[j] = _t_coef(s.y[m], s.t[m].astype(float), s.C[m]) - s.spec.tau
    return ColliderDelta(empirical=base.empirical, imbalance_part=base.closed_form,
                         tau_prime_part=float(np.sum(strat.q * tp)), tau_prime=tp)


# -- Monte Carlo ------------------------------------------------------------

def _mean_se(v):
    v = np.asarray(v, dtype=float)
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
    return float(np.mean(v)), se


@dataclass
class ErrorReport:
    """Means and MC standard errors over replications; each value is (mean, se)."""

    delta_d: dict
    delta_fap: dict
    delta_fap_nc: dict
    delta_fap_z: dict | None
    paired: dict  # differences taken within each replication
    J: int
    n: int
    reps: int
    spec: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def monte_carlo(spec: LinearSEMSpec, n: int = 100_000, reps: int = 20, J: int = 10,
                seed: int = 0, proxy_kind: str = "fitted", nc_bins: int = 10) -> ErrorReport:
    rows = []
    for r in range(reps):
        s = simulate(spec, n, seed=seed * 1_000_003 + r)
        d = delta_d(s)
        f = delta_fap(s, J, proxy_kind)
        g = delta_fap_nc(s, J, nc_bins, proxy_kind)
        row = {"d_emp": d.empirical, "d_cf": d.closed_form,
               "fap_emp": f.empirical, "fap_cf": f.closed_form,
               "nc_emp": g.empirical, "nc_cf": g.closed_form, "nc_dropped": g.dropped_mass,
               "conf_nc_residual": g.conf_nc_residual, "conf_nc_scale": g.conf_nc_scale}
        if spec.nc_kind == "collider":
            z = collider_bias(s, J, nc_bins, proxy_kind)
            row.update(z_imb=z.imbalance_part, z_tp=z.tau_prime_part)
        rows.append(row)
    col = {k: np.array([r[k] for r in rows]) for k in rows[0]}
    ms = lambda k: _mean_se(col[k])  # noqa: E731
    report = ErrorReport(
        delta_d={"empirical": ms("d_emp"), "closed_form": ms("d_cf")},
        delta_fap={"empirical": ms("fap_emp"), "closed_form": ms("fap_cf")},
        delta_fap_nc={"empirical": ms("nc_emp"), "closed_form": ms("nc_cf"),
                      "dropped_mass": ms("nc_dropped"), "conf_nc_residual": ms("conf_nc_residual"),
                      "conf_nc_scale": ms("conf_nc_scale")},
        delta_fap_z=None,
        paired={"d_emp_minus_cf": _mean_se(col["d_emp"] - col["d_cf"]),
                "fap_emp_minus_cf": _mean_se(col["fap_emp"] - col["fap_cf"]),
                "nc_minus_fap": _mean_se(col["nc_emp"] - col["fap_emp"]),
                "nc_cf_minus_fap_cf": _mean_se(col["nc_cf"] - col["fap_cf"]),
                "abs_nc_cf_minus_abs_fap_cf": _mean_se(np.abs(col["nc_cf"]) - np.abs(col["fap_cf"]))},
        J=J, n=n, reps=reps, spec=asdict(spec),
    )
    if spec.nc_kind == "collider":
        report.delta_fap_z = {"empirical": ms("nc_emp"), "imbalance_part": ms("z_imb"),
                              "tau_prime_part": ms("z_tp"),
                              "decomposition": _mean_se(col["z_imb"] + col["z_tp"])}
    return report


def agrees(est: tuple, ref: tuple, k: float = 3.0) -> bool:
    """|mean_est - mean_ref| < k * se_est (the MC error of the empirical estimate)."""
    return abs(est[0] - ref[0]) < k * est[1]


DEFAULT_NC_SPECS = {
    "adjustment": LinearSEMSpec(nc_kind="adjustment"),
    "instrument": LinearSEMSpec(nc_kind="instrument", treat_nc=2.0),
    "mediator": LinearSEMSpec(nc_kind="mediator"),
    "collider": LinearSEMSpec(nc_kind="collider"),
}


@dataclass(frozen=True)
class EquivalenceResult:
    kind: str
    verdict: str
    # each comparison holds (Delta without NC, Delta with NC, combined se, equal?)
    realized: tuple
    decomposition: tuple


def _compare(a: tuple, b: tuple, k: float = 3.0) -> tuple:
    se = math.hypot(a[1], b[1])
    return a[0], b[0], se, bool(abs(b[0] - a[0]) < k * se)


def check_equivalence(spec: LinearSEMSpec | None = None, kind: str = "adjustment",
                      n: int = 100_000, reps: int = 20, J: int = 10, seed: int = 0,
                      proxy_kind: str = "fitted") -> EquivalenceResult:
    """Is stratifying on f(C, NC) as good as stratifying on f(C)?

    Both the realised ATE errors and the confounder-imbalance decompositions
    are compared on the same samples (for a collider the decomposition
    includes the tau' term); "equivalent" needs both to agree within three
    combined MC standard errors.
    """
    if kind not in NC_KINDS:
        raise ConfigError(f"unknown NC kind {kind!r}")
    spec = replace(spec or DEFAULT_NC_SPECS[kind], nc_kind=kind)
    rep = monte_carlo(spec, n, reps, J, seed, proxy_kind)
    realized = _compare(rep.delta_fap["empirical"], rep.delta_fap_nc["empirical"])
    nc_decomp = rep.delta_fap_z["decomposition"] if kind == "collider" else rep.delta_fap_nc["closed_form"]
    decomposition = _compare(rep.delta_fap["closed_form"], nc_decomp)
    verdict = "equivalent" if realized[3] and decomposition[3] else "non-equivalent"
    return EquivalenceResult(kind=kind, verdict=verdict, realized=realized, decomposition=decomposition)


def lower_bound_grid(n_configs: int = 100, seed: int = 0) -> list:
    """Randomized instrument-like configs (alpha2 != 0, NC -> t)."""
    rng = np.random.Generator(np.random.Philox(seed))
    specs = []
    for _ in range(n_configs):
        sign = rng.choice([-1.0, 1.0])
        specs.append(LinearSEMSpec(
            gamma=float(rng.uniform(-1, 1)), tau=float(rng.uniform(0, 2)),
            beta=float(sign * rng.uniform(0.5, 2.0)), treat_c=float(rng.uniform(0.3, 1.5)),
            treat_nc=float(rng.choice([-1.0, 1.0]) * rng.uniform(0.3, 1.5)),
            nc_kind="instrument", noise_y=float(rng.uniform(0.5, 1.5))))
    return specs


def check_lower_bound(specs, n: int = 100_000, reps: int = 20, J: int = 10, seed: int = 0,
                      proxy_kind: str = "structural") -> dict:
    """|Delta_FAP^NC| >= |Delta_FAP| - 3 se per config, on the decompositions.

    The realised stratified-ATE errors are reported next to them.
    """
    rows = []
    for i, spec in enumerate(specs):
        rep = monte_carlo(spec, n, reps, J, seed + i, proxy_kind)
        fap, nc = rep.delta_fap["closed_form"], rep.delta_fap_nc["closed_form"]
        se = rep.paired["abs_nc_cf_minus_abs_fap_cf"][1]
        rows.append({"abs_delta_fap": abs(fap[0]), "abs_delta_fap_nc": abs(nc[0]), "se": se,
                     "realized_fap": rep.delta_fap["empirical"],
                     "realized_fap_nc": rep.delta_fap_nc["empirical"],
                     "holds": bool(abs(nc[0]) >= abs(fap[0]) - 3 * se)})
    frac = float(np.mean([r["holds"] for r in rows]))
    return {"n_configs": len(rows), "fraction_holding": frac, "rows": rows}


def paired_agrees(diff: tuple, k: float = 3.0) -> bool:
    """Mean per-replication (empirical - closed form) within k of its own MC s.e."""
    return abs(diff[0]) < k * diff[1]


def closed_form_agreement(specs, n: int = 100_000, reps: int = 20, J: int = 10, seed: int = 0) -> list:
    rows = []
    for i, spec in enumerate(specs):
        rep = monte_carlo(spec, n, reps, J, seed + i, proxy_kind="structural")
        rows.append({"gamma": spec.gamma, "tau": spec.tau, "beta": spec.beta,
                     "delta_d": rep.delta_d, "delta_fap": rep.delta_fap,
                     "d_emp_minus_cf": rep.paired["d_emp_minus_cf"],
                     "fap_emp_minus_cf": rep.paired["fap_emp_minus_cf"],
                     "delta_d_agrees": paired_agrees(rep.paired["d_emp_minus_cf"]),
                     "delta_fap_agrees": paired_agrees(rep.paired["fap_emp_minus_cf"])})
    return rows


def closed_form_grid(gammas=(-1.0, 0.0, 1.0), taus=(0.0, 1.0, 2.0), betas=(0.0, 0.5, 2.0)) -> list:
    return [LinearSEMSpec(gamma=g, tau=t, beta=b) for g in gammas for t in taus for b in betas]


def verify_theory(grid: dict | None = None) -> dict:
    """Run every theory check; the result carries a pass flag per invariant."""
    g = dict(grid or {})
    n = int(g.get("n", 100_000))
    reps = int(g.get("reps", 20))
    J = int(g.get("J", 10))
    seed = int(g.get("seed", 0))
    out = {"settings": {"n": n, "reps": reps, "J": J, "seed": seed}, "checks": {}}

    cf = g.get("closed_form", {})
    specs = closed_form_grid(tuple(cf.get("gammas", (-1.0, 0.0, 1.0))),
                             tuple(cf.get("taus", (0.0, 1.0, 2.0))),
                             tuple(cf.get("betas", (0.0, 0.5, 2.0))))
    rows = closed_form_agreement(specs, n, reps, J, seed)
    ok = all(r["delta_d_agrees"] and r["delta_fap_agrees"] for r in rows)
    out["checks"]["closed_form_agreement"] = {"pass": bool(ok), "rows": rows}

    s = simulate(LinearSEMSpec(), n, seed)
    d, f1 = delta_d(s), delta_fap(s, J=1, proxy_kind="structural")
    collapse = d.empirical == f1.empirical and d.closed_form == f1.closed_form
    out["checks"]["j1_collapse"] = {"pass": bool(collapse)}
    s0 = simulate(LinearSEMSpec(beta=0.0), n, seed)
    zero = delta_d(s0).closed_form == 0.0 and delta_fap(s0, J, "structural").closed_form == 0.0
    out["checks"]["beta_zero"] = {"pass": bool(zero)}

    lb = g.get("lower_bound", {})
    lb_specs = lower_bound_grid(int(lb.get("n_configs", 100)), int(lb.get("seed", seed)))
    res = check_lower_bound(lb_specs, n, reps, J, seed)
    res["pass"] = res["fraction_holding"] >= 0.95
    out["checks"]["lower_bound"] = res

    eq = {}
    for kind in g.get("equivalence", list(NC_KINDS)):
        r = check_equivalence(kind=kind, n=n, reps=reps, J=J, seed=seed)
        expected = "equivalent" if kind == "adjustment" else "non-equivalent"
        eq[kind] = {**asdict(r), "expected": expected, "pass": r.verdict == expected}
    out["checks"]["equivalence"] = {"pass": all(v["pass"] for v in eq.values()), "kinds": eq}
    out["pass"] = all(c["pass"] for c in out["checks"].values())
    return out
