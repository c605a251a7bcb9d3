"""Finite-difference oracles for the analytic gradients.

Two suites run on small random instances in float64:

* ``discriminative``: the closed-form class-filter gradient against central
  differences of the discriminative action w.r.t. that filter column.
* ``generative``: backprop of the generative action (every parameter, with
  the decoder weights checked through ``decoder_surprisal`` too) against
  central differences of the action value.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import sae
from . import surprisal as sp
from .numcore import make_rng

FD_STEP = 1e-6
DIS_STEP = 1e-4
TOLERANCE = 1e-6


def central_difference(f, x, eps=FD_STEP):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x``, perturbed in place."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        grad[i] = (fp - fm) / (2 * eps)
    return grad


def rel_err(a, b):
    """Max-norm error relative to the larger of the two max-norms (floored at 1e-8)."""
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8))


@dataclass(frozen=True)
class SuiteReport:
    suite: str
    cases: int
    failures: int
    max_rel_err: float
    tolerance: float
    seconds: float

    @property
    def passed(self):
        return self.failures == 0 and self.cases > 0


def _dims(rng, hi=8):
    return int(rng.integers(1, hi + 1)), int(rng.integers(1, hi + 1))


def discriminative_case(rng):
    """One random instance; returns the relative error for a random class."""
    d = int(rng.integers(1, 9))
    n = int(rng.integers(2, 6))
    w = rng.normal(size=(d, n))
    b = rng.normal(size=n)
    z = rng.normal(size=d)
    i = int(rng.integers(n))
    head = sp.PerceptionHead(w, b)
    y = sp.logits(head, z)
    col = w[:, i].copy()

    def action():
        w[:, i] = col
        return sp.action_dis(sp.logits(head, z), i)

    # the action is quadratic in the column, so a wide step is exact and avoids roundoff
    fd = central_difference(action, col, eps=DIS_STEP)
    w[:, i] = col
    return rel_err(sp.grad_filter(z, y, i), fd)


def generative_case(rng):
    d, h = _dims(rng)
    batch = int(rng.integers(1, 6))
    m = sae.SparseAutoencoder.init(d, h, rng, l2_on=("both", "decoder")[int(rng.integers(2))])
    m.b_enc[:] = rng.normal(0, 0.5, h)
    m.b_dec[:] = rng.normal(0, 0.5, d)
    x = rng.normal(size=(batch, d))
    _, grads = sae.action_gradients(m, x)
    worst = rel_err(sae.decoder_surprisal(m, x), grads["w_dec"])
    for name, p in m.params().items():
        fd = central_difference(lambda: sae.generative_action(m, x).value, p)
        worst = max(worst, rel_err(grads[name], fd))
    return worst


SUITES = {"discriminative": discriminative_case, "generative": generative_case}


def run_suite(name, cases=1000, seed=0, tol=TOLERANCE):
    case = SUITES[name]
    rng = make_rng(seed)
    t0 = time.perf_counter()
    errs = np.array([case(rng) for _ in range(cases)])
    return SuiteReport(
        name, cases, int(np.sum(~(errs <= tol))), float(errs.max(initial=0.0)), tol, time.perf_counter() - t0
    )


def run_all(cases=1000, seed=0, tol=TOLERANCE):
    return [run_suite(name, cases, seed + k, tol) for k, name in enumerate(SUITES)]
