"""Small numeric substrate shared by the rest of the package.

Tensors are plain numpy arrays; the helpers here add the shape and
finiteness checks the models rely on, a Jacobi eigensolver, seeded RNG
construction and an SGD optimizer with a step learning-rate schedule.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_DTYPE = np.float64


class DimensionError(ValueError):
    """Raised when tensor shapes are incompatible."""


class ValidationError(ValueError):
    """Raised when a value violates a documented precondition."""


def as_tensor(x, dtype=DEFAULT_DTYPE, name="tensor"):
    """Convert ``x`` to a contiguous array and reject NaN/Inf."""
    arr = np.ascontiguousarray(x, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def matmul(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def _jacobi_eig(s, tol=1e-14, max_sweeps=100):
    a = np.array(s, dtype=np.float64, copy=True)
    n = a.shape[0]
    q = np.eye(n)
    scale = max(np.abs(a).max(), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for r in range(p + 1, n):
                apr = a[p, r]
                if abs(apr) <= 1e-300:
                    continue
                theta = (a[r, r] - a[p, p]) / (2.0 * apr)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * c
                # rotate columns p, r then rows p, r
                ap = a[:, p].copy()
                ar = a[:, r]
                a[:, p] = c * ap - sn * ar
                a[:, r] = sn * ap + c * ar
                ap = a[p, :].copy()
                ar = a[r, :]
                a[p, :] = c * ap - sn * ar
                a[r, :] = sn * ap + c * ar
                qp = q[:, p].copy()
                qr = q[:, r]
                q[:, p] = c * qp - sn * qr
                q[:, r] = sn * qp + c * qr
    return np.diag(a).copy(), q


def sym_eig(s, method="eigh", sym_tol=1e-9):
    """Eigendecomposition of a symmetric matrix.

    Parameters
    ----------
    s : array_like, shape (n, n)
        Symmetric matrix.
    method : {"eigh", "jacobi"}
        ``"eigh"`` uses LAPACK through numpy; ``"jacobi"`` runs cyclic
        Jacobi rotations in pure numpy and is kept as an independent check.
    sym_tol : float
        Maximum allowed ``|s - s.T|`` entry, relative to ``max|s|``.

    Returns
    -------
    eigenvalues : ndarray, shape (n,)
        Sorted in descending order.
    eigenvectors : ndarray, shape (n, n)
        Column ``k`` pairs with ``eigenvalues[k]``.
    """
    s = as_tensor(s, name="matrix")
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimensionError(f"sym_eig expects a square matrix, got {s.shape}")
    scale = max(np.abs(s).max(), 1.0) if s.size else 1.0
    if s.size and np.abs(s - s.T).max() > sym_tol * scale:
        raise ValidationError("matrix is not symmetric")
    s = 0.5 * (s + s.T)
    if method == "eigh":
        w, q = np.linalg.eigh(s)
    elif method == "jacobi":
        w, q = _jacobi_eig(s)
    else:
        raise ValueError(f"unknown method {method!r}")
    order = np.argsort(-w, kind="stable")
    return w[order], q[:, order]


def sigmoid(x):
    x = np.asarray(x, dtype=np.result_type(x, np.float32))
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(y, eps=1e-6):
    y = np.clip(np.asarray(y, dtype=np.result_type(y, np.float32)), eps, 1.0 - eps)
    return np.log(y) - np.log1p(-y)


def make_rng(seed):
    """Counter-based (Philox) generator; identical streams on every platform."""
    return np.random.Generator(np.random.Philox(int(seed)))


def spawn(rng, n):
    """Split ``rng`` into ``n`` independent child generators."""
    return rng.spawn(n)


@dataclass(frozen=True)
class SgdConfig:
    """SGD hyperparameters with a piecewise-constant learning rate.

    ``lr_schedule`` is a sequence of ``(epoch, lr)`` pairs; the rate in effect
    at a given epoch is the one attached to the last threshold not above it.
    """

    lr_schedule: tuple = ((0, 0.1), (60, 0.02), (120, 0.004), (160, 0.0008))
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 200
    batch_size: int = 128

    def __post_init__(self):
        sched = tuple((int(e), float(lr)) for e, lr in self.lr_schedule)
        object.__setattr__(self, "lr_schedule", sched)
        if self.epochs < 0:
            raise ValidationError("epochs must be non-negative")
        if not sched or sched[0][0] != 0:
            raise ValidationError("lr_schedule must start at epoch 0")
        epochs = [e for e, _ in sched]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValidationError("lr_schedule epochs must be strictly increasing")
        if any(lr < 0 for _, lr in sched):
            raise ValidationError("learning rates must be non-negative")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be positive")

    def lr(self, epoch):
        rate = self.lr_schedule[0][1]
        for start, value in self.lr_schedule:
            if epoch >= start:
                rate = value
        return rate

    def to_dict(self):
        return {
            "lr_schedule": [list(p) for p in self.lr_schedule],
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
        }


# Head training schedule: 200 epochs, momentum 0.9, weight decay 5e-4,
# lr 0.1 -> 0.02 -> 0.004 at epochs 60 / 120, one more x0.2 step at 160.
HEAD_SGD = SgdConfig(
    lr_schedule=((0, 0.1), (60, 0.02), (120, 0.004), (160, 0.0008)),
    momentum=0.9,
    weight_decay=5e-4,
    epochs=200,
)


def sgd_step(param, grad, velocity, cfg, epoch):
    """In-place momentum SGD update; returns ``(param, velocity)``.

    ``v <- momentum * v + grad + weight_decay * param``;
    ``param <- param - lr(epoch) * v``.
    """
    if param.shape != grad.shape or param.shape != velocity.shape:
        raise DimensionError(
            f"shape mismatch: param {param.shape}, grad {grad.shape}, velocity {velocity.shape}"
        )
    velocity *= cfg.momentum
    velocity += grad
    if cfg.weight_decay:
        velocity += cfg.weight_decay * param
    param -= cfg.lr(epoch) * velocity
    return param, velocity
