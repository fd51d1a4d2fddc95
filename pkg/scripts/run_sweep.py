"""Run a sweep from a config file and print the median table plus the table checks.

    python scripts/run_sweep.py configs/sweep.toml results/
"""

import argparse
import logging
import time

from causal_bench.harness import emit_report, load_config, render_markdown, run_sweep, table_checks


def main():
    p = argparse.ArgumentParser()
    p.add_argument("config")
    p.add_argument("out")
    p.add_argument("-q", "--quiet", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING)

    cfg = load_config(args.config)
    t0 = time.perf_counter()

    def progress(cell, dt):
        if not args.quiet:
            val = cell.error or f"pehe={cell.pehe:.4g} eps_ate={cell.eps_ate:.4g}"
            print(f"seed {cell.seed} {cell.estimator:<5} {{{cell.combo}}} {val} ({dt:.1f}s)", flush=True)

    report = run_sweep(cfg, progress=progress)
    emit_report(report, args.out)
    print(f"\n{len(report['cells'])} cells in {time.perf_counter() - t0:.0f}s\n")
    print(render_markdown(report))
    for c in table_checks(report):
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}")


if __name__ == "__main__":
    main()
