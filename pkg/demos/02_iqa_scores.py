"""Full-reference quality scores from a small sparse autoencoder.

Train on patches of a few bundled pristine images, then score one image
against increasingly noisy copies with both scorers. Scores are
correlations, so a perfect copy scores exactly 1.
"""
import numpy as np

from surprisal import datakit, iqa, metrics
from surprisal.numcore import SgdConfig, make_rng

images = datakit.load_bundled_pristine()[:8]
sgd = SgdConfig(((0, 0.01),), momentum=0.9, weight_decay=0.0, epochs=10, batch_size=100)
model, trace = iqa.fit_iqa_model(images, make_rng(1), n_patches=3000, hidden=100, cfg=sgd)
print(f"autoencoder loss {trace[0]:.3f} -> {trace[-1]:.3f}")

ref = images[0]
print("identity:", iqa.unique_score(model, ref, ref).score, iqa.surprisal_score(model, ref, ref).score)

for kind in ("gauss_noise", "gauss_blur"):
    base, prop = [], []
    for level in range(1, 6):
        dist = datakit.distort(ref, datakit.DistortionSpec(kind, level, seed=0))
        base.append(iqa.unique_score(model, ref, dist).score)
        prop.append(iqa.surprisal_score(model, ref, dist).score)
    print(kind)
    print("  baseline", np.round(base, 4), " SRCC vs -level", round(metrics.srcc(base, -np.arange(1, 6)), 3))
    print("  proposed", np.round(prop, 4), " SRCC vs -level", round(metrics.srcc(prop, -np.arange(1, 6)), 3))
