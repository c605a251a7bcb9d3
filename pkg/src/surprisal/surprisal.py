"""Discriminative surprisal features from the final affine layer of a classifier.

For penultimate features ``z`` and logits ``y = W^T z + b`` the action of
asserting class ``i`` is ``||onehot(i) - y||^2``. Its gradient with respect
to the class-``i`` filter (column ``i`` of ``W``) is ``-2 (1 - y_i) z``; the
feature of an input concatenates these N gradients in class order.

Class indices are 0-based throughout the API. User-facing surfaces (CLI,
FeatureBundle labels) use 1-based classes and convert at the boundary.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import datakit
from .numcore import DimensionError, ValidationError

STD_FLOOR = 1e-8


@dataclass
class PerceptionHead:
    w_l: np.ndarray  # (d, N); column i is the class-i filter
    b_l: np.ndarray  # (N,)

    def __post_init__(self):
        self.w_l = np.asarray(self.w_l, dtype=np.float64)
        self.b_l = np.asarray(self.b_l, dtype=np.float64)
        if self.w_l.ndim != 2 or self.b_l.shape != (self.w_l.shape[1],):
            raise DimensionError(f"w_l {self.w_l.shape} and b_l {self.b_l.shape} disagree")
        if self.n_classes < 2 or self.feat_dim < 1:
            raise ValidationError("need N >= 2 classes and d >= 1")
        if not (np.all(np.isfinite(self.w_l)) and np.all(np.isfinite(self.b_l))):
            raise ValidationError("head weights must be finite")

    @property
    def n_classes(self):
        return self.w_l.shape[1]

    @property
    def feat_dim(self):
        return self.w_l.shape[0]


@dataclass(frozen=True)
class SurprisalFeature:
    r: np.ndarray  # (N * d,)
    source_pred: int
    norm_applied: bool = False


def logits(head, z):
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != head.feat_dim:
        raise DimensionError(f"feature width {z.shape[-1]} != head input {head.feat_dim}")
    return z @ head.w_l + head.b_l


def predict(y):
    """Argmax over the last axis; ties resolve to the lowest index."""
    y = np.asarray(y)
    if y.shape[-1] < 2:
        raise ValidationError("need at least two logits")
    return np.argmax(y, axis=-1)


def onehot(i, n):
    if not 0 <= i < n:
        raise IndexError(f"class index {i} outside [0, {n})")
    a = np.zeros(n)
    a[i] = 1.0
    return a


def action_dis(y, i):
    y = np.asarray(y, dtype=np.float64)
    diff = onehot(i, y.shape[-1]) - y
    return float(diff @ diff)


def grad_filter(z, y, i):
    """Gradient of ``action_dis(y, i)`` w.r.t. the class-``i`` filter."""
    z = np.asarray(z, dtype=np.float64)
    return -2.0 * (1.0 - float(np.asarray(y)[i])) * z


def grad_full(z, y, i):
    """Gradient of ``action_dis(y, i)`` w.r.t. the whole ``W`` (d x N, rank one)."""
    y = np.asarray(y, dtype=np.float64)
    return np.outer(np.asarray(z, dtype=np.float64), -2.0 * (onehot(i, y.shape[-1]) - y))


def surprisal_matrix(head, z, mode="filter"):
    """Batched gradient features.

    Parameters
    ----------
    head : PerceptionHead
    z : ndarray, shape (M, d)
    mode : {"filter", "full"}
        ``"filter"`` keeps only the class-i column of each gradient
        (width ``N*d``); ``"full"`` flattens all ``d*N`` entries of every
        gradient (width ``N*d*N``).

    Returns
    -------
    r : ndarray, shape (M, width)
    preds : ndarray, shape (M,)
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    y = logits(head, z)
    preds = predict(y)
    n = head.n_classes
    if mode == "filter":
        scale = -2.0 * (1.0 - y)  # (M, N)
        r = scale[:, :, None] * z[:, None, :]
    elif mode == "full":
        eye = np.eye(n)
        resid = -2.0 * (eye[None, :, :] - y[:, None, :])  # (M, action i, column j)
        r = z[:, None, :, None] * resid[:, :, None, :]  # (M, i, d, j)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return r.reshape(z.shape[0], -1), preds


def extract_rx(head, z, mode="filter"):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise DimensionError(f"extract_rx takes one feature vector, got shape {z.shape}")
    r, preds = surprisal_matrix(head, z[None, :], mode)
    return SurprisalFeature(r[0], int(preds[0]))


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray  # floored; for "minmax" holds the range
    kind: str = "zscore"

    def __post_init__(self):
        if np.any(self.std <= 0):
            raise ValidationError("normalization scale must be positive")


def _stack(features):
    if isinstance(features, np.ndarray):
        return np.atleast_2d(features)
    return np.stack([f.r if isinstance(f, SurprisalFeature) else np.asarray(f) for f in features])


def fit_norm(features, kind="zscore"):
    """Per-component statistics over a set of features (list or (M, D) array)."""
    x = _stack(features).astype(np.float64)
    if x.shape[0] < 2:
        raise ValidationError("need at least two features to fit normalization")
    if kind == "zscore":
        mean = x.mean(axis=0)
        std = np.maximum(x.std(axis=0), STD_FLOOR)
    elif kind == "minmax":
        mean = x.min(axis=0)
        std = np.maximum(x.max(axis=0) - mean, STD_FLOOR)
    else:
        raise ValueError(f"unknown normalization {kind!r}")
    return NormStats(mean, std, kind)


def apply_norm(f, stats):
    if isinstance(f, SurprisalFeature):
        return SurprisalFeature(apply_norm(f.r, stats), f.source_pred, True)
    f = np.asarray(f, dtype=np.float64)
    if f.shape[-1] != stats.mean.shape[0]:
        raise DimensionError(f"feature width {f.shape[-1]} != stats width {stats.mean.shape[0]}")
    return (f - stats.mean) / stats.std


def save_norm(stats, directory, prefix="norm"):
    directory = Path(directory)
    datakit.tensorfile_write(directory / f"{prefix}_mean.stsr", stats.mean)
    datakit.tensorfile_write(directory / f"{prefix}_std.stsr", stats.std)
    (directory / f"{prefix}.json").write_text(json.dumps({"kind": stats.kind}) + "\n")


def load_norm(directory, prefix="norm"):
    directory = Path(directory)
    kind = json.loads((directory / f"{prefix}.json").read_text())["kind"]
    return NormStats(
        datakit.tensorfile_read(directory / f"{prefix}_mean.stsr"),
        datakit.tensorfile_read(directory / f"{prefix}_std.stsr"),
        kind,
    )
