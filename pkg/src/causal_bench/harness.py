"""Estimator x covariate-combination sweep over seeded synthetic datasets.

Two-step estimators (PSS, PSM, IPW, CBPS) take the ATE straight from the
propensity adjustment and the ITE from a boosted outcome model on
(covariates, t): one model per stratum for PSS, one model on the matched
sample for PSM, one weighted model for IPW and CBPS. CFR produces both
from its two outcome heads.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .adjust import ate_ipw, ate_matched, ate_stratified, ipw_weights, match_1nn, stratify
from .balrep import CFRConfig, fit_cfr, predict_po
from .boost import fit_gbm, ite_predict
from .errors import ConfigError
from .metrics import eps_ate, pehe, true_effects
from .propensity import fit_cbps, fit_logistic
from .synthgen import CovariateRole, DGPConfig, LabeledDataset, combo_name, generate_dataset, parse_combo, project

log = logging.getLogger(__name__)

ESTIMATORS = ("PSS", "PSM", "IPW", "CBPS", "CFR")
DEFAULT_COMBOS = ("C", "C,I", "C,A", "C,YI", "C,M", "C,TI", "C,Z")


@dataclass
class SweepConfig:
    dgp: DGPConfig = field(default_factory=DGPConfig)
    combos: list = field(default_factory=lambda: list(DEFAULT_COMBOS))
    estimators: list = field(default_factory=lambda: list(ESTIMATORS))
    seeds: list = field(default_factory=lambda: list(range(10)))
    clip_bounds: tuple = (0.01, 0.99)
    strata: int = 5
    caliper: float | None = None
    ipw_estimator: str = "hajek"
    # roles left out of the propensity design but kept for the outcome model
    propensity_exclude: list = field(default_factory=list)
    gbm: dict = field(default_factory=dict)
    cfr: dict = field(default_factory=dict)

    def validate(self) -> "SweepConfig":
        self.dgp.validate()
        if not self.combos:
            raise ConfigError("combos must be nonempty")
        for c in self.combos:
            roles = parse_combo(c)
            if CovariateRole.C not in roles:
                raise ConfigError(f"combination {c!r} does not contain C")
        for e in self.estimators:
            if e not in ESTIMATORS:
                raise ConfigError(f"unknown estimator {e!r}")
        if len(self.seeds) < 1:
            raise ConfigError("need at least one seed")
        if self.ipw_estimator not in ("hajek", "ht"):
            raise ConfigError("ipw_estimator must be 'hajek' or 'ht'")
        unknown = set(self.cfr) - set(CFRConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown cfr options {sorted(unknown)}")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dgp"] = self.dgp.to_dict()
        d["clip_bounds"] = list(self.clip_bounds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        d = dict(d)
        dgp = DGPConfig.from_dict(d.pop("dgp", {}))
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown sweep fields: {sorted(unknown)}")
        if "clip_bounds" in d:
            d["clip_bounds"] = tuple(d["clip_bounds"])
        cfg = cls(dgp=dgp, **d)
        return cfg

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def read_mapping(path) -> dict:
    """Parse a JSON or TOML (by suffix) file into a dict."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # python < 3.11
            import tomli as tomllib
        try:
            return tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_config(path) -> SweepConfig:
    return SweepConfig.from_dict(read_mapping(path)).validate()


@dataclass
class EstimatorReport:
    estimator: str
    combo: str
    seed: int
    pehe: float | None = None
    root_pehe: float | None = None
    eps_ate: float | None = None
    ate_hat: float | None = None
    ate_true: float | None = None
    diagnostics: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _cell_seed(seed: int, combo: str, estimator: str) -> int:
    return (int(seed) * 1_000_003 + zlib.crc32(f"{combo}|{estimator}".encode())) % (2 ** 32)


def propensity_roles(roles, exclude) -> tuple:
    drop = {CovariateRole.parse(e) for e in exclude}
    return tuple(r for r in roles if r not in drop)


def _propensity_design(ds, roles, exclude):
    return project(ds, propensity_roles(roles, exclude))


def _outcome_features(roles, ds):
    names = []
    for r in roles:
        names += [f"{r.value}__{k}" for k in range(ds.block(r).shape[1])]
    return tuple(names) + ("t",)


def adjust_and_model(ds: LabeledDataset, roles, estimator: str, scores, cfg: SweepConfig,
                     seed: int = 0) -> tuple:
    """Second half of a two-step estimator given propensity scores.

    Returns (ate_hat, ite_hat, models, diagnostics); ``models`` lists the
    fitted outcome GBMs (one per stratum for PSS).
    """
    X = project(ds, roles)
    t, y = ds.t, ds.y_f
    feats = _outcome_features(roles, ds)
    Xt = np.column_stack([X, t])
    gbm_opts = dict(cfg.gbm)
    diag = {}
    if estimator == "PSS":
        strat = stratify(scores, t, cfg.strata)
        ate_hat = ate_stratified(y, t, strat)
        ite_hat = np.empty(ds.n)
        models = []
        for j in range(strat.J):
            m = strat.assignment == j
            model = fit_gbm(Xt[m], y[m], features=feats, seed=seed + j, **gbm_opts)
            ite_hat[m] = ite_predict(model, X[m])
            models.append(model)
        diag.update(strata=strat.table(t), merges=strat.merges,
                    best_iter=[m.best_iter for m in models])
    elif estimator == "PSM":
        ms = match_1nn(scores, t, caliper=cfg.caliper)
        ate_hat = ate_matched(y, t, ms)
        model = fit_gbm(Xt, y, weights=ms.usage_weights(), features=feats, seed=seed, **gbm_opts)
        ite_hat = ite_predict(model, X)
        models = [model]
        diag.update(matching=ms.summary(), best_iter=model.best_iter)
    elif estimator in ("IPW", "CBPS"):
        wv = ipw_weights(scores, t)
        ate_hat = ate_ipw(y, t, wv, cfg.ipw_estimator)
        model = fit_gbm(Xt, y, weights=wv.raw, features=feats, seed=seed, **gbm_opts)
        ite_hat = ite_predict(model, X)
        models = [model]
        diag.update(weights=wv.summary(), best_iter=model.best_iter)
    else:
        raise ConfigError(f"unknown two-step estimator {estimator!r}")
    return float(ate_hat), ite_hat, models, diag


def fit_propensity(ds: LabeledDataset, roles, estimator: str, cfg: SweepConfig):
    Xp = _propensity_design(ds, roles, cfg.propensity_exclude)
    if estimator == "CBPS":
        return fit_cbps(Xp, ds.t, clip_bounds=cfg.clip_bounds)
    return fit_logistic(Xp, ds.t, clip_bounds=cfg.clip_bounds)


def run_cell(ds: LabeledDataset, combo, estimator: str, cfg: SweepConfig | None = None,
             seed: int | None = None) -> EstimatorReport:
    cfg = cfg or SweepConfig()
    roles = parse_combo(combo)
    name = combo_name(roles)
    if seed is None:
        seed = ds.config.seed if ds.config is not None else 0
    rep = EstimatorReport(estimator=estimator, combo=name, seed=int(seed))
    try:
        if estimator not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {estimator!r}")
        ite, ate = true_effects(ds)
        cseed = _cell_seed(seed, name, estimator)
        if estimator == "CFR":
            X = project(ds, roles)
            net = fit_cfr(X, ds.t, ds.y_f, CFRConfig(**{**cfg.cfr, "seed": cseed}))
            y0_hat, y1_hat = predict_po(net, X)
            ite_hat = y1_hat - y0_hat
            ate_hat = float(ite_hat.mean())
            diag = {"final_objective": net.trace[-1]["total"]}
        else:
            fit = fit_propensity(ds, roles, estimator, cfg)
            ate_hat, ite_hat, _, diag = adjust_and_model(ds, roles, estimator, fit.scores, cfg, cseed)
            diag.update(n_clipped=fit.n_clipped, converged=fit.converged,
                        iterations=fit.iterations, coef=[float(c) for c in fit.coef])
            if fit.loss is not None:
                diag["balance_loss"] = fit.loss
        rep.pehe = pehe(ite, ite_hat)
        rep.root_pehe = math.sqrt(rep.pehe)
        rep.ate_hat = ate_hat
        rep.ate_true = float(ate)
        rep.eps_ate = eps_ate(ate, ate_hat)
        rep.diagnostics = diag
    except Exception as exc:  # a failing cell must not abort the sweep
        log.exception("cell %s/%s/seed %s failed", estimator, name, seed)
        rep.error = f"{type(exc).__name__}: {exc}"
    return rep


def _aggregate(cells, combos, estimators):
    summary = []
    for combo in combos:
        for est in estimators:
            ok = [c for c in cells if c.combo == combo and c.estimator == est and c.ok]
            row = {"combo": combo, "estimator": est, "n_ok": len(ok),
                   "n_failed": sum(1 for c in cells if c.combo == combo and c.estimator == est and not c.ok)}
            for metric in ("pehe", "root_pehe", "eps_ate"):
                vals = np.array([getattr(c, metric) for c in ok], dtype=float)
                row[f"{metric}_median"] = float(np.median(vals)) if vals.size else None
                row[f"{metric}_se"] = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else None
            summary.append(row)
    return summary


def run_sweep(cfg: SweepConfig, progress=None) -> dict:
    cfg.validate()
    combos = [combo_name(parse_combo(c)) for c in cfg.combos]
    cells = []
    for seed in cfg.seeds:
        ds = generate_dataset(replace(cfg.dgp, seed=int(seed)))
        for combo in combos:
            for est in cfg.estimators:
                t0 = time.perf_counter()
                cell = run_cell(ds, combo, est, cfg, seed=int(seed))
                cells.append(cell)
                if progress:
                    progress(cell, time.perf_counter() - t0)
    order = {c: i for i, c in enumerate(combos)}
    eorder = {e: i for i, e in enumerate(ESTIMATORS)}
    cells.sort(key=lambda c: (c.seed, order[c.combo], eorder[c.estimator]))
    return {
        "provenance": {
            "config_hash": cfg.hash(),
            "version": __version__,
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        },
        "config": cfg.to_dict(),
        "cells": [asdict(c) for c in cells],
        "summary": _aggregate(cells, combos, list(cfg.estimators)),
    }


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def report_json(report: dict) -> str:
    return json.dumps(_clean(report), sort_keys=True, indent=1)


def summary_lookup(report: dict) -> dict:
    return {(r["combo"], r["estimator"]): r for r in report["summary"]}


def _combos_estimators(report):
    combos, ests = [], []
    for r in report["summary"]:
        if r["combo"] not in combos:
            combos.append(r["combo"])
        if r["estimator"] not in ests:
            ests.append(r["estimator"])
    return combos, ests


def table(report: dict, metrics=("pehe", "eps_ate")) -> dict:
    """Table-shaped medians with best (min) and worst (max) combo per column."""
    combos, ests = _combos_estimators(report)
    look = summary_lookup(report)
    columns = {}
    for metric in metrics:
        for est in ests:
            vals = {c: look[(c, est)][f"{metric}_median"] for c in combos}
            finite = {c: v for c, v in vals.items() if v is not None}
            columns[(metric, est)] = {
                "values": vals,
                "best": min(finite, key=finite.get) if finite else None,
                "worst": max(finite, key=finite.get) if finite else None,
            }
    return {"combos": combos, "estimators": ests, "metrics": list(metrics), "columns": columns}


def _fmt(v):
    return "nan" if v is None else f"{v:.6g}"


def render_markdown(report: dict) -> str:
    tab = table(report)
    cols = list(tab["columns"])
    head = "| " + " | ".join(["{C,NC}"] + [f"{m} {e}" for m, e in cols]) + " |"
    lines = [head, "|" + "---|" * (len(cols) + 1)]
    for combo in tab["combos"]:
        cells = []
        for key in cols:
            col = tab["columns"][key]
            s = _fmt(col["values"][combo])
            if combo == col["best"]:
                s = f"**{s}** (best)"
            elif combo == col["worst"]:
                s = f"*{s}* (worst)"
            cells.append(s)
        lines.append(f"| {{{combo}}} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def parse_markdown(text: str) -> dict:
    """Inverse of ``render_markdown``: {(metric, estimator): {combo: value}}."""
    rows = [l for l in text.strip().splitlines() if l.startswith("|")]
    header = [h.strip() for h in rows[0].strip("|").split("|")][1:]
    keys = [tuple(h.split(" ", 1)) for h in header]
    out = {k: {} for k in keys}
    for line in rows[2:]:
        parts = [p.strip() for p in line.strip("|").split("|")]
        combo = parts[0].strip("{}")
        for k, raw in zip(keys, parts[1:]):
            v = raw.split(" ")[0].strip("*")
            out[k][combo] = None if v == "nan" else float(v)
    return out


def render_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["combo", "estimator", "metric", "median", "se", "n_ok", "n_failed"])
    for r in report["summary"]:
        for metric in ("pehe", "root_pehe", "eps_ate"):
            w.writerow([r["combo"], r["estimator"], metric, _fmt(r[f"{metric}_median"]),
                        _fmt(r[f"{metric}_se"]), r["n_ok"], r["n_failed"]])
    return buf.getvalue()


def emit_report(report: dict, out_dir, formats=("json", "md", "csv")) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        if fmt == "json":
            p = out / "report.json"
            p.write_text(report_json(report))
        elif fmt == "md":
            p = out / "table.md"
            p.write_text(render_markdown(report))
        elif fmt == "csv":
            p = out / "summary.csv"
            p.write_text(render_csv(report))
        else:
            raise ValueError(f"unknown format {fmt!r}")
        written.append(p)
    return written


# -- table-level acceptance checks -------------------------------------------

@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


def check_best_cell(report: dict, best="C,A", tie="C,YI", tie_rel=0.05) -> list:
    """Median PEHE of ``best`` is minimal per estimator, ties with ``tie`` allowed."""
    tab = table(report, ("pehe",))
    out = []
    for est in tab["estimators"]:
        vals = tab["columns"][("pehe", est)]["values"]
        v = vals.get(best)
        others = {c: x for c, x in vals.items() if c != best and x is not None}
        if v is None:
            out.append(Check(f"best pehe {est}", False, f"no value for {{{best}}}"))
            continue
        below = {c: x for c, x in others.items() if x < v}
        ok = not below or (set(below) == {tie} and v <= (1 + tie_rel) * below[tie])
        out.append(Check(f"best pehe {est}", ok,
                         f"{{{best}}}={v:.6g}; lower: " + (", ".join(f"{{{c}}}={x:.6g}" for c, x in below.items()) or "none")))
    return out


def check_worst_cell(report: dict, worst="C,Z", ratio=1.5) -> list:
    tab = table(report)
    out = []
    for (metric, est), col in tab["columns"].items():
        vals = {c: x for c, x in col["values"].items() if x is not None}
        v = vals.get(worst)
        rest = [x for c, x in vals.items() if c != worst]
        if v is None or not rest:
            out.append(Check(f"worst {metric} {est}", False, "missing values"))
            continue
        lo = min(vals.values())
        r = v / lo if lo > 0 else math.inf
        ok = v > max(rest) and r >= ratio
        top = max((c for c in vals if c != worst), key=vals.get)
        out.append(Check(f"worst {metric} {est}", ok,
                         f"{{{worst}}}={v:.6g}, next {{{top}}}={vals[top]:.6g}, worst/best={r:.3g}"))
    return out


def check_adjustment_neutrality(report: dict, a="C", b="C,A", k=3.0,
                                estimators=("PSS", "PSM", "IPW", "CBPS")) -> list:
    """|median eps_ate(a) - median eps_ate(b)| < k * combined across-seed SE."""
    look = summary_lookup(report)
    out = []
    for est in estimators:
        if (a, est) not in look or (b, est) not in look:
            continue
        ra, rb = look[(a, est)], look[(b, est)]
        if ra["eps_ate_se"] is None or rb["eps_ate_se"] is None:
            out.append(Check(f"neutrality {est}", False, "needs at least two seeds"))
            continue
        se = math.hypot(ra["eps_ate_se"], rb["eps_ate_se"])
        d = abs(ra["eps_ate_median"] - rb["eps_ate_median"])
        out.append(Check(f"neutrality {est}", d < k * se, f"|diff|={d:.3g}, {k:g}*se={k * se:.3g}"))
    return out


def table_checks(report: dict) -> list:
    return check_best_cell(report) + check_worst_cell(report) + check_adjustment_neutrality(report)
