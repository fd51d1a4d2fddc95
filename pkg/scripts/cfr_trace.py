"""Train CFR on one combination and write the per-epoch trace as CSV.

    python scripts/cfr_trace.py C,A trace.csv --epochs 100
"""

import argparse

from causal_bench.balrep import CFRConfig, fit_cfr, predict_po, trace_csv
from causal_bench.metrics import eps_ate, pehe, true_effects
from causal_bench.synthgen import DGPConfig, generate_dataset, project

p = argparse.ArgumentParser()
p.add_argument("combo")
p.add_argument("out")
p.add_argument("--epochs", type=int, default=300)
p.add_argument("--alpha", type=float, default=1.0)
p.add_argument("--seed", type=int, default=0)
args = p.parse_args()

ds = generate_dataset(DGPConfig(seed=args.seed))
X = project(ds, args.combo)
net = fit_cfr(X, ds.t, ds.y_f, CFRConfig(epochs=args.epochs, alpha=args.alpha, seed=args.seed))
y0, y1 = predict_po(net, X)
ite, ate = true_effects(ds)
print(f"pehe={pehe(ite, y1 - y0):.5g} eps_ate={eps_ate(ate, (y1 - y0).mean()):.5g}")
with open(args.out, "w") as fh:
    fh.write(trace_csv(net))
