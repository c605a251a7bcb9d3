"""Gradient features of a tiny linear classifier.

For every class i we pretend the label is i and take the gradient of the
squared one-hot loss w.r.t. that class's filter. The stack of N such
gradients describes one input.
"""
import numpy as np

from surprisal import gradcheck
from surprisal import surprisal as sp
from surprisal.numcore import make_rng

rng = make_rng(0)
d, n = 4, 3
head = sp.PerceptionHead(rng.normal(size=(d, n)), np.zeros(n))

z = rng.normal(size=d)
y = sp.logits(head, z)
print("logits", np.round(y, 3), "-> predicted class", sp.predict(y))

for i in range(n):
    print(f"class {i}: action {sp.action_dis(y, i):7.3f}  filter gradient {np.round(sp.grad_filter(z, y, i), 3)}")

r, _ = sp.surprisal_matrix(head, z[None, :])
print("concatenated feature width", r.shape[1], "(N * d)")

# the closed form agrees with central differences
for rep in gradcheck.run_all(cases=200):
    print(f"{rep.suite:15s} {rep.cases - rep.failures}/{rep.cases} ok, max rel err {rep.max_rel_err:.1e}")
