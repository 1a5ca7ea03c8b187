"""
Customized training as clusters separate
========================================

Three latent classes, each with its own sparse linear model, are pulled
apart by increasing the spread of their centers. Pass a number of seeds
on the command line for a fuller run (default 2).
"""

import sys

from customtrain.simulation import percent_improvement, run_study, summarize

seeds = range(int(sys.argv[1]) if len(sys.argv) > 1 else 2)
rows = run_study("low_dim", [0.0, 5.0, 10.0], seeds, methods=("CT", "ST", "KNN"),
                 progress=lambda msg: print(msg, file=sys.stderr))

table = {(s["method"], s["sigma_c"]): s for s in summarize(rows)}
print(f"{'sigma_c':>8} {'CT':>8} {'ST':>8} {'KNN':>8} {'%Imp':>7}")
for sigma in (0.0, 5.0, 10.0):
    ct, st, knn = (table[m, sigma]["mean_mse"] for m in ("CT", "ST", "KNN"))
    print(f"{sigma:8.0f} {ct:8.3f} {st:8.3f} {knn:8.3f} {percent_improvement(st, ct):7.1f}")
