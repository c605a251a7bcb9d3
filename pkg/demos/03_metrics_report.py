"""The IQA evaluation suite on made-up predictions.

Rank correlations use the raw scores; PLCC, RMSE and the outlier ratio
are computed after a four-parameter logistic map onto the MOS scale.
"""
import numpy as np

from surprisal import metrics
from surprisal.numcore import make_rng

rng = make_rng(3)
mos = rng.uniform(1, 9, 200)
good = np.tanh((mos - 5) / 3) + rng.normal(0, 0.05, mos.size)
poor = np.tanh((mos - 5) / 3) + rng.normal(0, 0.4, mos.size)

reports = {name: metrics.evaluate(p, mos) for name, p in (("good", good), ("poor", poor))}
for name, rep in reports.items():
    print(f"{name:5s} srcc {rep.srcc:.3f} krcc {rep.krcc:.3f} plcc {rep.plcc:.3f} rmse {rep.rmse:.3f} or {rep.or_:.3f} ({rep.mapping})")

r1, r2 = reports["good"].plcc, reports["poor"].plcc
print("Fisher z:", round(metrics.fisher_z_statistic(r1, r2, 200, 200), 2), "->", metrics.significance(r1, r2, 200, 200))
# a small gap on a mid-sized set is not significant
print("0.908 vs 0.888 at n=450 ->", metrics.significance(0.908, 0.888, 450, 450))
