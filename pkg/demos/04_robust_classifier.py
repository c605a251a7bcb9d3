"""Three-step classification under distortion, at a size that runs in a minute.

A small perception net is trained on clean synthetic images. Its gradient
features on the clean training split train a second head, which then
classifies distorted test images. Gains at this size are noisy; the
acceptance run uses the full configuration.
"""
from surprisal import experiments

cfg = experiments.RobustConfig(n_train=100, n_test=30, kinds=("gauss_noise", "gauss_blur"))
res = experiments.run_robustness(cfg, log=print)
for kind, level, n, f, p in res.table:
    print(f"{kind:12s} level {level}: perception {f:.3f}  pipeline {p:.3f}")
print(f"mean gain {res.mean_gain_pp():+.2f} pp, trend SRCC {res.trend():.2f}")
