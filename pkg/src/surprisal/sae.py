"""One-hidden-layer sparse autoencoder and its generative action.

The action of an input batch ``X`` is::

    A_g = mean_b ||x_b - x_hat_b||^2 + beta * sum_j KL(rho || zbar_j) + lam * ||W||^2

with sigmoid hidden units ``z = sigmoid(W_enc x + b_enc)``, an affine
decoder ``x_hat = W_dec z + b_dec`` and ``zbar`` the batch-mean activation.
The same quantity is the training loss. The gradient of the action with
respect to the decoder weights is the generative surprisal feature.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import datakit
from .numcore import DimensionError, SgdConfig, ValidationError, sgd_step, sigmoid

log = logging.getLogger(__name__)

SPARSITY_WEIGHT = 3.0
WEIGHT_DECAY = 3e-3
TARGET_ACTIVATION = 0.035
KL_CLAMP = 1e-6


class TrainingError(RuntimeError):
    """Raised when training produces a non-finite loss."""


@dataclass
class SparseAutoencoder:
    w_enc: np.ndarray  # (h, d)
    b_enc: np.ndarray  # (h,)
    w_dec: np.ndarray  # (d, h)
    b_dec: np.ndarray  # (d,)
    beta: float = SPARSITY_WEIGHT
    lam: float = WEIGHT_DECAY
    rho: float = TARGET_ACTIVATION
    # which weights enter the L2 term: "both" or "decoder"
    l2_on: str = "both"

    def __post_init__(self):
        h, d = self.w_enc.shape
        if self.b_enc.shape != (h,) or self.w_dec.shape != (d, h) or self.b_dec.shape != (d,):
            raise DimensionError(
                f"inconsistent shapes: w_enc {self.w_enc.shape}, b_enc {self.b_enc.shape}, "
                f"w_dec {self.w_dec.shape}, b_dec {self.b_dec.shape}"
            )
        if not 0.0 < self.rho < 1.0:
            raise ValidationError("rho must lie in (0, 1)")
        if self.beta < 0 or self.lam < 0:
            raise ValidationError("beta and lambda must be non-negative")
        if self.l2_on not in ("both", "decoder"):
            raise ValidationError(f"l2_on must be 'both' or 'decoder', got {self.l2_on!r}")
        for name in ("w_enc", "b_enc", "w_dec", "b_dec"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValidationError(f"{name} has non-finite entries")

    @property
    def d(self):
        return self.w_enc.shape[1]

    @property
    def h(self):
        return self.w_enc.shape[0]

    @classmethod
    def init(cls, d, h, rng, dtype=np.float64, **hyper):
        """Symmetric uniform weights in +-sqrt(6/(d+h)), zero biases."""
        bound = np.sqrt(6.0 / (d + h))
        w_enc = rng.uniform(-bound, bound, size=(h, d)).astype(dtype)
        w_dec = rng.uniform(-bound, bound, size=(d, h)).astype(dtype)
        return cls(w_enc, np.zeros(h, dtype), w_dec, np.zeros(d, dtype), **hyper)

    def params(self):
        return {"w_enc": self.w_enc, "b_enc": self.b_enc, "w_dec": self.w_dec, "b_dec": self.b_dec}

    def copy(self):
        return replace(self, **{k: v.copy() for k, v in self.params().items()})


@dataclass(frozen=True)
class GenerativeAction:
    value: float
    mse_term: float
    kl_term: float
    l2_term: float


def _as_batch(m, x):
    x = np.asarray(x)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != m.d:
        raise DimensionError(f"expected inputs of width {m.d}, got shape {x.shape}")
    return x


def encode(m, x):
    """Hidden activations; accepts a single vector or a batch of rows."""
    single = np.ndim(x) == 1
    z = sigmoid(_as_batch(m, x) @ m.w_enc.T + m.b_enc)
    return z[0] if single else z


def decode(m, z):
    z = np.asarray(z)
    single = z.ndim == 1
    zb = z[None, :] if single else z
    if zb.shape[-1] != m.h:
        raise DimensionError(f"expected latents of width {m.h}, got shape {z.shape}")
    out = zb @ m.w_dec.T + m.b_dec
    return out[0] if single else out


def kl_sparsity(zbar, rho):
    """Sum over units of KL(Bernoulli(rho) || Bernoulli(zbar_j))."""
    zbar = np.clip(np.asarray(zbar, dtype=np.float64), KL_CLAMP, 1.0 - KL_CLAMP)
    return float(np.sum(rho * np.log(rho / zbar) + (1 - rho) * np.log((1 - rho) / (1 - zbar))))


def _l2(m):
    dec = float(np.sum(m.w_dec * m.w_dec))
    if m.l2_on == "decoder":
        return dec
    return dec + float(np.sum(m.w_enc * m.w_enc))


def generative_action(m, batch):
    x = _as_batch(m, batch)
    if x.shape[0] == 0:
        raise ValidationError("empty batch")
    z = encode(m, x)
    resid = x - decode(m, z)
    mse = float(np.mean(np.sum(resid * resid, axis=1)))
    kl = kl_sparsity(z.mean(axis=0), m.rho)
    l2 = _l2(m)
    return GenerativeAction(mse + m.beta * kl + m.lam * l2, mse, kl, l2)


def action_gradients(m, batch):
    """Backprop of the action; returns ``(action, grads)`` with grads keyed like ``params()``."""
    x = _as_batch(m, batch)
    n = x.shape[0]
    if n == 0:
        raise ValidationError("empty batch")
    z = encode(m, x)
    xhat = decode(m, z)
    resid = xhat - x
    mse = float(np.mean(np.sum(resid * resid, axis=1)))
    zbar = z.mean(axis=0)
    zc = np.clip(zbar, KL_CLAMP, 1.0 - KL_CLAMP)
    rho = m.rho
    kl = float(np.sum(rho * np.log(rho / zc) + (1 - rho) * np.log((1 - rho) / (1 - zc))))
    l2 = _l2(m)

    dxhat = (2.0 / n) * resid
    g_wdec = dxhat.T @ z + 2.0 * m.lam * m.w_dec
    g_bdec = dxhat.sum(axis=0)
    dkl = -rho / zc + (1 - rho) / (1 - zc)
    # the clamp is flat outside its range
    dkl = np.where((zbar > KL_CLAMP) & (zbar < 1.0 - KL_CLAMP), dkl, 0.0)
    dz = dxhat @ m.w_dec + (m.beta / n) * dkl
    da = dz * z * (1.0 - z)
    g_wenc = da.T @ x
    if m.l2_on == "both":
        g_wenc = g_wenc + 2.0 * m.lam * m.w_enc
    g_benc = da.sum(axis=0)
    action = GenerativeAction(mse + m.beta * kl + m.lam * l2, mse, kl, l2)
    return action, {"w_enc": g_wenc, "b_enc": g_benc, "w_dec": g_wdec, "b_dec": g_bdec}


def decoder_surprisal(m, batch):
    """Gradient of the generative action w.r.t. the decoder weights, shape (d, h).

    Closed form: ``(2/B) sum_b (x_hat_b - x_b) z_b^T + 2 lam W_dec``; the
    sparsity term does not depend on the decoder.
    """
    x = _as_batch(m, batch)
    if x.shape[0] == 0:
        raise ValidationError("empty batch")
    z = encode(m, x)
    resid = decode(m, z) - x
    return (2.0 / x.shape[0]) * (resid.T @ z) + 2.0 * m.lam * m.w_dec


@dataclass
class TrainResult:
    model: SparseAutoencoder
    loss_trace: list = field(default_factory=list)


def default_sae_sgd(epochs=30):
    return SgdConfig(lr_schedule=((0, 0.01),), momentum=0.9, weight_decay=0.0, epochs=epochs, batch_size=100)


def train(m, patches, cfg, rng):
    """Minibatch SGD on the action. The input model is not modified.

    ``loss_trace[k]`` is the mean minibatch loss over epoch ``k``.
    """
    x = _as_batch(m, patches)
    n = x.shape[0]
    if n < cfg.batch_size:
        raise ValidationError(f"need at least batch_size={cfg.batch_size} patches, got {n}")
    m = m.copy()
    params = m.params()
    vel = {k: np.zeros_like(v) for k, v in params.items()}
    trace = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n - cfg.batch_size + 1, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            action, grads = action_gradients(m, x[idx])
            if not np.isfinite(action.value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            for k in params:
                sgd_step(params[k], grads[k], vel[k], cfg, epoch)
            total += action.value
            count += 1
        trace.append(total / count)
        log.debug("sae epoch %d loss %.6f", epoch, trace[-1])
    return TrainResult(m, trace)


def save_model(m, directory, extra=None):
    """Write the four parameter tensors plus a JSON sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, arr in m.params().items():
        datakit.tensorfile_write(directory / f"sae_{name}.stsr", arr)
    meta = {
        "d": m.d,
        "h": m.h,
        "beta": m.beta,
        "lambda": m.lam,
        "rho": m.rho,
        "l2_on": m.l2_on,
        "precision": "f32" if m.w_enc.dtype == np.float32 else "f64",
    }
    meta.update(extra or {})
    (directory / "sae.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_model(directory):
    directory = Path(directory)
    meta_path = directory / "sae.json"
    if not meta_path.is_file():
        raise datakit.MissingFileError(f"no sae.json in {directory}")
    meta = json.loads(meta_path.read_text())
    arrs = {k: datakit.tensorfile_read(directory / f"sae_{k}.stsr") for k in ("w_enc", "b_enc", "w_dec", "b_dec")}
    m = SparseAutoencoder(
        **arrs, beta=meta["beta"], lam=meta["lambda"], rho=meta["rho"], l2_on=meta.get("l2_on", "both")
    )
    if (m.d, m.h) != (meta["d"], meta["h"]):
        raise datakit.BundleDimensionError(f"sidecar dims ({meta['d']}, {meta['h']}) disagree with tensors")
    return m
