"""causal-bench command line."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .balrep import CFRConfig, fit_cfr, predict_po, trace_csv
from .errors import CausalBenchError, ConfigError
from .harness import (
    SweepConfig, adjust_and_model, emit_report, load_config, propensity_roles, read_mapping,
    render_csv, render_markdown, report_json, run_sweep, table_checks,
)
from .metrics import eps_ate, pehe, true_effects
from .propensity import PropensityFit, add_intercept, expit, fit_cbps, fit_logistic
from .synthgen import DGPConfig, combo_name, generate_dataset, load_dataset, parse_combo, project, save_dataset
from .theory import verify_theory

log = logging.getLogger("causal_bench")


def _write(path, text):
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _dgp_from_mapping(d: dict) -> DGPConfig:
    return DGPConfig.from_dict(d.get("dgp", d)).validate()


def cmd_generate(args):
    cfg = _dgp_from_mapping(read_mapping(args.config))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    ds = generate_dataset(cfg)
    save_dataset(ds, args.out)
    print(f"wrote {ds.n} rows to {args.out}")
    return 0


def cmd_fit(args):
    ds = load_dataset(args.data)
    roles = parse_combo(args.combo)
    X = project(ds, roles)
    out = {"combo": combo_name(roles), "method": args.method, "data": str(args.data)}
    if args.method == "cfr":
        opts = {k: v for k, v in (("epochs", args.epochs), ("alpha", args.alpha),
                                  ("seed", args.seed)) if v is not None}
        net = fit_cfr(X, ds.t, ds.y_f, CFRConfig(**opts))
        out["net"] = net.to_dict()
        out["trace"] = net.trace
        y0, y1 = predict_po(net, X)
        if ds.y0 is not None:
            ite, ate = true_effects(ds)
            out["pehe"] = pehe(ite, y1 - y0)
            out["eps_ate"] = eps_ate(ate, float(np.mean(y1 - y0)))
        if args.trace_csv:
            _write(args.trace_csv, trace_csv(net))
    else:
        bounds = tuple(args.clip)
        fn = fit_cbps if args.method == "cbps" else fit_logistic
        fit = fn(X, ds.t, clip_bounds=bounds)
        out.update(fit.to_dict())
        out["method"] = args.method
    _write(args.out, json.dumps(out, indent=1, sort_keys=True))
    print(f"wrote {args.out}")
    return 0


def _scores_from_fit(fit: dict, ds) -> tuple:
    roles = parse_combo(fit["combo"])
    X = project(ds, roles)
    coef = np.asarray(fit["coef"], dtype=float)
    if coef.size != X.shape[1] + 1:
        raise ConfigError(f"fit has {coef.size} coefficients for {X.shape[1]} columns")
    lo, hi = fit.get("clip_bounds", (0.01, 0.99))
    return roles, np.clip(expit(add_intercept(X) @ coef), lo, hi)


def cmd_adjust(args):
    fit = json.loads(Path(args.fit).read_text())
    if fit.get("method") == "cfr":
        raise ConfigError("adjust needs a propensity fit (logistic or cbps), not a cfr fit")
    method = args.method.upper()
    if method == "CBPS" and fit.get("method") != "cbps":
        raise ConfigError("--method cbps needs a fit produced with --method cbps")
    ds = load_dataset(args.data)
    roles, scores = _scores_from_fit(fit, ds)
    cfg = SweepConfig(strata=args.strata, caliper=args.caliper, ipw_estimator=args.ipw_estimator)
    ate_hat, ite_hat, models, diag = adjust_and_model(ds, roles, method, scores, cfg, args.seed)
    out = {"method": args.method, "combo": combo_name(roles), "ate_hat": ate_hat, "diagnostics": diag}
    if ds.y0 is not None:
        ite, ate = true_effects(ds)
        out.update(ate_true=ate, eps_ate=eps_ate(ate, ate_hat), pehe=pehe(ite, ite_hat))
    _write(args.out, json.dumps(out, indent=1, sort_keys=True, default=float))
    if args.dump_model:
        _write(args.dump_model, json.dumps([m.to_dict() for m in models], sort_keys=True))
    print(f"ATE estimate {ate_hat:.6g}" + (f" (eps_ate {out['eps_ate']:.4g})" if "eps_ate" in out else ""))
    return 0


def _print_checks(checks) -> bool:
    ok = True
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}")
        ok &= c.passed
    return ok


def cmd_sweep(args):
    cfg = load_config(args.config)

    def progress(cell, dt):
        status = "error: " + cell.error if cell.error else f"pehe={cell.pehe:.4g} eps_ate={cell.eps_ate:.4g}"
        log.info("seed %d %-5s {%s} %s (%.1fs)", cell.seed, cell.estimator, cell.combo, status, dt)

    report = run_sweep(cfg, progress=progress)
    paths = emit_report(report, args.out)
    print(render_markdown(report))
    print("wrote " + ", ".join(str(p) for p in paths))
    if args.assert_:
        return 0 if _print_checks(table_checks(report)) else 1
    return 0


def cmd_report(args):
    path = Path(args.inp)
    if path.is_dir():
        path = path / "report.json"
    if not path.exists():
        raise ConfigError(f"no report at {path}")
    report = json.loads(path.read_text())
    if args.format == "md":
        print(render_markdown(report), end="")
    elif args.format == "csv":
        print(render_csv(report), end="")
    else:
        print(report_json(report))
    if args.assert_:
        return 0 if _print_checks(table_checks(report)) else 1
    return 0


def cmd_verify_theory(args):
    grid = read_mapping(args.grid) if args.grid else {}
    res = verify_theory(grid)
    _write(args.out, json.dumps(res, indent=1, sort_keys=True, default=float))
    for name, c in res["checks"].items():
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {name}")
    if args.assert_:
        return 0 if res["pass"] else 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="causal-bench")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a labeled synthetic dataset")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="fit a propensity model or a CFR network")
    f.add_argument("--method", choices=["logistic", "cbps", "cfr"], required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--combo", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--clip", type=float, nargs=2, default=(0.01, 0.99), metavar=("LO", "HI"))
    f.add_argument("--epochs", type=int)
    f.add_argument("--alpha", type=float)
    f.add_argument("--seed", type=int)
    f.add_argument("--trace-csv")
    f.set_defaults(func=cmd_fit)

    a = sub.add_parser("adjust", help="propensity adjustment plus outcome model")
    a.add_argument("--method", choices=["pss", "psm", "ipw", "cbps"], required=True)
    a.add_argument("--fit", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--strata", type=int, default=5)
    a.add_argument("--caliper", type=float)
    a.add_argument("--ipw-estimator", choices=["hajek", "ht"], default="hajek")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--dump-model", metavar="PATH")
    a.set_defaults(func=cmd_adjust)

    s = sub.add_parser("sweep", help="run the estimator x combination sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--assert", dest="assert_", action="store_true")
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="render a finished sweep")
    r.add_argument("--in", dest="inp", required=True)
    r.add_argument("--format", choices=["md", "csv", "json"], default="md")
    r.add_argument("--assert", dest="assert_", action="store_true")
    r.set_defaults(func=cmd_report)

    v = sub.add_parser("verify-theory", help="Monte-Carlo checks of the error decompositions")
    v.add_argument("--grid")
    v.add_argument("--out", required=True)
    v.add_argument("--assert", dest="assert_", action="store_true")
    v.set_defaults(func=cmd_verify_theory)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"causal-bench: error: {exc}", file=sys.stderr)
        return 2
    except CausalBenchError as exc:
        print(f"causal-bench: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
