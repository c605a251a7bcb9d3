"""Classifiers: the desk-scale perception network and the gradient-feature head.

Both are small sigmoid MLPs trained with softmax cross-entropy and momentum
SGD. The perception network's last affine layer doubles as the
:class:`~surprisal.surprisal.PerceptionHead` from which gradient features
are taken; the head ``H`` classifies those features.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import datakit
from .numcore import HEAD_SGD, DimensionError, SgdConfig, ValidationError, sgd_step, sigmoid
from .surprisal import NormStats, PerceptionHead, apply_norm, predict, surprisal_matrix

log = logging.getLogger(__name__)

HEAD_HIDDEN = (300, 100)


class DivergenceError(RuntimeError):
    pass


def _log_softmax(y):
    y = np.asarray(y, dtype=np.float64)
    shifted = y - y.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def ce_loss(y, label):
    """Softmax cross-entropy of one logit vector and its gradient w.r.t. the logits."""
    logp = _log_softmax(y)
    if not 0 <= label < logp.shape[-1]:
        raise IndexError(f"class {label} outside [0, {logp.shape[-1]})")
    grad = np.exp(logp)
    grad[label] -= 1.0
    return float(-logp[label]), grad


def ce_batch(y, labels):
    """Mean cross-entropy over rows and its gradient (already divided by the batch size)."""
    logp = _log_softmax(y)
    n = logp.shape[0]
    rows = np.arange(n)
    loss = float(-logp[rows, labels].mean())
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return loss, grad / n


@dataclass(frozen=True)
class CeDecomposition:
    cross_entropy: float
    kl: float  # KL(target || softmax)
    target_entropy: float  # H(target); zero for a one-hot target
    pred_entropy: float  # H(softmax)


def ce_decomposition(y, target):
    """Split cross-entropy against a target distribution into KL and entropy.

    ``cross_entropy == kl + target_entropy``; for one-hot targets the target
    entropy vanishes and cross-entropy equals the KL term. Subtracting
    ``sum(p log p)`` of the *predicted* distribution from the KL term instead
    gives ``cross_entropy + pred_entropy - target_entropy``.
    """
    target = np.asarray(target, dtype=np.float64)
    logp = _log_softmax(y)
    p = np.exp(logp)
    nz = target > 0
    ce = float(-(target * logp).sum())
    kl = float((target[nz] * (np.log(target[nz]) - logp[nz])).sum())
    h_t = float(-(target[nz] * np.log(target[nz])).sum())
    h_p = float(-(p * logp).sum())
    return CeDecomposition(ce, kl, h_t, h_p)


@dataclass
class Mlp:
    """Affine layers with sigmoid between them and linear output.

    ``weights[k]`` has shape (in, out) so a layer computes ``x @ W + b``.
    """

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValidationError("need matching, non-empty weight and bias lists")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise DimensionError(f"layer {k}: weight {w.shape} vs bias {b.shape}")
            if k and w.shape[0] != self.weights[k - 1].shape[1]:
                raise DimensionError(f"layer {k} input {w.shape[0]} != previous output")

    @classmethod
    def init(cls, dims, rng, dtype=np.float64):
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
            biases.append(np.zeros(fan_out, dtype))
        return cls(weights, biases)

    @property
    def in_dim(self):
        return self.weights[0].shape[0]

    @property
    def out_dim(self):
        return self.weights[-1].shape[1]

    def params(self):
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self):
        return type(self)([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def forward(self, x, keep=False):
        x = np.atleast_2d(np.asarray(x, dtype=self.weights[0].dtype))
        if x.shape[1] != self.in_dim:
            raise DimensionError(f"input width {x.shape[1]} != {self.in_dim}")
        acts = [x]
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w + b
            if k < last:
                x = sigmoid(x)
            acts.append(x)
        return (x, acts) if keep else x

    def backward(self, acts, dout):
        """Gradients for ``params()`` given upstream gradient w.r.t. the output."""
        grads = []
        delta = dout
        for k in range(len(self.weights) - 1, -1, -1):
            a_in = acts[k]
            grads.append(delta.sum(axis=0))
            grads.append(a_in.T @ delta)
            if k:
                delta = (delta @ self.weights[k].T) * a_in * (1.0 - a_in)
        return grads[::-1]

    def loss_and_grads(self, x, labels):
        out, acts = self.forward(x, keep=True)
        loss, dout = ce_batch(out, labels)
        return loss, self.backward(acts, dout)


class MlpHead(Mlp):
    """Head H on gradient features: N*d -> 300 -> 100 -> N by default."""

    @classmethod
    def for_features(cls, in_dim, n_classes, rng, hidden=HEAD_HIDDEN):
        return cls.init((in_dim, *hidden, n_classes), rng)


def fit_sgd(model, x, labels, cfg, rng, name="model"):
    """Minibatch momentum SGD on mean cross-entropy. Mutates and returns ``model``."""
    x = np.asarray(x, dtype=model.weights[0].dtype)
    labels = np.asarray(labels, dtype=np.int64)
    n = x.shape[0]
    if labels.shape != (n,):
        raise DimensionError(f"{n} samples but {labels.shape} labels")
    params = model.params()
    vel = [np.zeros_like(p) for p in params]
    trace = []
    bs = min(cfg.batch_size, n)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            loss, grads = model.loss_and_grads(x[idx], labels[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"{name}: non-finite loss at epoch {epoch}")
            for p, g, v in zip(params, grads, vel):
                sgd_step(p, g, v, cfg, epoch)
            if not all(np.isfinite(p).all() for p in params):
                raise DivergenceError(f"{name}: non-finite parameters at epoch {epoch}")
            total += loss
            count += 1
        trace.append(total / count)
        log.debug("%s epoch %d loss %.5f", name, epoch, trace[-1])
    return model, trace


def train_head(feats, labels, cfg=HEAD_SGD, rng=None, hidden=HEAD_HIDDEN, n_classes=None, init=None):
    """Train H on normalized gradient features. Returns ``(head, loss_trace)``."""
    feats = np.asarray(feats, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    head = init.copy() if init is not None else MlpHead.for_features(feats.shape[1], n_classes, rng, hidden)
    if head.in_dim != feats.shape[1] or head.out_dim != n_classes:
        raise DimensionError(f"head is {head.in_dim}->{head.out_dim}, data is {feats.shape[1]}->{n_classes}")
    return fit_sgd(head, feats, labels, cfg, rng, name="head")


@dataclass
class PerceptionNet:
    """Feed-forward classifier ``f``; its last layer is the perception head.

    Inputs are flattened images, standardized with statistics from the
    training set before the first layer.
    """

    mlp: Mlp
    input_mean: np.ndarray
    input_scale: float

    @property
    def head(self):
        return PerceptionHead(self.mlp.weights[-1], self.mlp.biases[-1])

    @property
    def feat_dim(self):
        return self.mlp.weights[-1].shape[0]

    @property
    def n_classes(self):
        return self.mlp.out_dim

    def _prep(self, images):
        x = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
        return (x - self.input_mean) / self.input_scale

    def features(self, images):
        """Penultimate activations ``z_d``, shape (n, d)."""
        _, acts = self.mlp.forward(self._prep(images), keep=True)
        return acts[-2]

    def logits(self, images):
        return self.mlp.forward(self._prep(images))

    def predict(self, images):
        return predict(self.logits(images))


def default_perception_sgd(epochs=40):
    return SgdConfig(lr_schedule=((0, 0.05), (30, 0.01)), momentum=0.9, weight_decay=5e-4, epochs=epochs, batch_size=64)


def train_perception(dataset, cfg, rng, hidden=(64,)):
    x = dataset.images.reshape(len(dataset), -1)
    mean = x.mean(axis=0)
    scale = float(x.std()) or 1.0
    n_classes = int(dataset.labels.max()) + 1
    mlp = Mlp.init((x.shape[1], *hidden, n_classes), rng)
    net = PerceptionNet(mlp, mean, scale)
    fit_sgd(mlp, net._prep(dataset.images), dataset.labels, cfg, rng, name="perception")
    return net


@dataclass(frozen=True)
class Inference:
    coarse: np.ndarray  # prediction of f alone
    final: np.ndarray  # prediction of H on the gradient features


def head_predict(head, normalized_rx):
    """Step 3 of inference: only the normalized feature is visible here."""
    return predict(head.forward(normalized_rx))


def infer(images, net, stats, head, mode="filter"):
    """Three-step inference over a batch of images."""
    z = net.features(images)
    r, coarse = surprisal_matrix(net.head, z, mode)
    if r.shape[1] != stats.mean.shape[0]:
        raise DimensionError(f"feature width {r.shape[1]} != normalization width {stats.mean.shape[0]}")
    final = head_predict(head, apply_norm(r, stats))
    return Inference(coarse, final)


# -- persistence -----------------------------------------------------------


def save_mlp(mlp, directory, prefix):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        datakit.tensorfile_write(directory / f"{prefix}_w{k}.stsr", w)
        datakit.tensorfile_write(directory / f"{prefix}_b{k}.stsr", b)
    dims = [mlp.in_dim] + [w.shape[1] for w in mlp.weights]
    (directory / f"{prefix}.json").write_text(json.dumps({"dims": dims}) + "\n")


def load_mlp(directory, prefix, cls=Mlp):
    directory = Path(directory)
    meta = directory / f"{prefix}.json"
    if not meta.is_file():
        raise datakit.MissingFileError(f"missing {meta}")
    dims = json.loads(meta.read_text())["dims"]
    ws = [datakit.tensorfile_read(directory / f"{prefix}_w{k}.stsr") for k in range(len(dims) - 1)]
    bs = [datakit.tensorfile_read(directory / f"{prefix}_b{k}.stsr") for k in range(len(dims) - 1)]
    return cls(ws, bs)


def save_perception(net, directory):
    save_mlp(net.mlp, directory, "perception")
    datakit.tensorfile_write(Path(directory) / "perception_input_mean.stsr", net.input_mean)
    datakit.tensorfile_write(Path(directory) / "perception_input_scale.stsr", np.array([net.input_scale]))


def load_perception(directory):
    mlp = load_mlp(directory, "perception")
    mean = datakit.tensorfile_read(Path(directory) / "perception_input_mean.stsr")
    scale = float(datakit.tensorfile_read(Path(directory) / "perception_input_scale.stsr")[0])
    return PerceptionNet(mlp, mean, scale)
