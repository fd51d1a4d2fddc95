"""Monte-Carlo verification of the error decompositions, with a short summary.

    python scripts/verify_theory.py configs/theory_grid.json theory_report.json
"""

import json
import sys
import time

from causal_bench.harness import read_mapping
from causal_bench.theory import verify_theory

grid = read_mapping(sys.argv[1]) if len(sys.argv) > 1 else {}
out = sys.argv[2] if len(sys.argv) > 2 else "theory_report.json"

t0 = time.perf_counter()
res = verify_theory(grid)
with open(out, "w") as fh:
    json.dump(res, fh, indent=1, sort_keys=True, default=float)

for name, c in res["checks"].items():
    print(f"{'PASS' if c['pass'] else 'FAIL'}  {name}")
lb = res["checks"]["lower_bound"]
print(f"lower bound holds in {lb['fraction_holding']:.0%} of {lb['n_configs']} configs")
for kind, v in res["checks"]["equivalence"]["kinds"].items():
    a, b, se, _ = v["realized"]
    print(f"{kind:<11} {v['verdict']:<15} D_FAP={a:+.4f}  D_FAP^NC={b:+.4f}  se={se:.4f}")
print(f"{time.perf_counter() - t0:.0f}s, report in {out}")
