"""Full-reference image quality assessment on a sparse autoencoder.

Both images of a pair are converted to YGCr, cut into 8x8x3 patches, mean
subtracted and ZCA whitened with statistics fitted once on a training
corpus. Two scorers share that front end:

* ``unique_score`` encodes the patches, zeroes activations below a
  threshold and rank-correlates the concatenated activations.
* ``surprisal_score`` projects each patch onto the gradient of the
  generative action w.r.t. the decoder weights, maps the projections
  through an inverse sigmoid and rank-correlates the concatenated
  magnitude and sign of the result.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import datakit, sae
from .metrics import srcc
from .numcore import DimensionError, ValidationError, logit, sym_eig

PATCH = 8
PATCH_DIM = PATCH * PATCH * 3
ACT_THRESHOLD = 0.025
WHITEN_EPS = 0.01
LOGIT_EPS = 1e-6

# BT.601 luma weights
_KR, _KG, _KB = 0.299, 0.587, 0.114


def rgb_to_ygcr(img):
    """RGB in [0, 1] -> (Y, G, Cr), each in [0, 1].

    ``Y = 0.299 R + 0.587 G + 0.114 B``; G is passed through;
    ``Cr = 0.5 + (R - Y) / 1.402``.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError(f"expected an H x W x 3 image, got {img.shape}")
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    y = _KR * r + _KG * g + _KB * b
    cr = 0.5 + (r - y) / (2.0 * (1.0 - _KR))
    return np.stack([y, g, cr], axis=-1)


def make_patches(img, mode="grid", rng=None, count=None):
    """Cut ``PATCH x PATCH x 3`` patches, flattened row-major to 192 values.

    ``grid`` tiles the image with stride 8 in raster order, dropping any
    right/bottom remainder. ``random`` draws ``count`` top-left corners
    uniformly from ``rng``.
    """
    img = np.asarray(img)
    h, w = img.shape[:2]
    if h < PATCH or w < PATCH:
        raise ValidationError(f"image {h}x{w} is smaller than a {PATCH}x{PATCH} patch")
    if mode == "grid":
        gh, gw = h // PATCH, w // PATCH
        tiles = img[: gh * PATCH, : gw * PATCH].reshape(gh, PATCH, gw, PATCH, -1)
        return tiles.transpose(0, 2, 1, 3, 4).reshape(gh * gw, -1)
    if mode == "random":
        if rng is None or count is None:
            raise ValueError("random patches need rng and count")
        ys = rng.integers(0, h - PATCH + 1, size=count)
        xs = rng.integers(0, w - PATCH + 1, size=count)
        return np.stack([img[y : y + PATCH, x : x + PATCH].ravel() for y, x in zip(ys, xs)])
    raise ValueError(f"unknown patch mode {mode!r}")


def fit_whitening(patches, eps=WHITEN_EPS, method="eigh"):
    """Patch mean and symmetric ZCA matrix ``Q diag(1/sqrt(lam + eps)) Q^T``.

    The covariance uses the 1/M (population) normalization.
    """
    x = np.asarray(patches, dtype=np.float64)
    m, d = x.shape
    if m < d:
        raise ValidationError(f"need at least {d} patches to fit whitening, got {m}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / m
    lam, q = sym_eig(cov, method=method)
    lam = np.maximum(lam, 0.0)
    if eps == 0 and lam.min() <= 0:
        raise ValidationError("covariance is singular; use eps > 0")
    zca = (q / np.sqrt(lam + eps)) @ q.T
    return mean, 0.5 * (zca + zca.T)


@dataclass
class IqaModel:
    sae: sae.SparseAutoencoder
    patch_mean: np.ndarray
    zca: np.ndarray
    act_threshold: float = ACT_THRESHOLD
    whiten_eps: float = WHITEN_EPS

    def __post_init__(self):
        if self.sae.d != PATCH_DIM:
            raise DimensionError(f"autoencoder input {self.sae.d} != patch size {PATCH_DIM}")
        if self.zca.shape != (PATCH_DIM, PATCH_DIM) or self.patch_mean.shape != (PATCH_DIM,):
            raise DimensionError("whitening artifacts have the wrong shape")
        if not np.allclose(self.zca, self.zca.T, atol=1e-12):
            raise ValidationError("zca matrix must be symmetric")
        if self.act_threshold < 0:
            raise ValidationError("activation threshold must be non-negative")

    def preprocess(self, img):
        """Whitened grid patches of ``img``, shape (P, 192)."""
        p = make_patches(rgb_to_ygcr(img), "grid")
        return (p - self.patch_mean) @ self.zca


@dataclass(frozen=True)
class QualityRecord:
    ref_id: str
    dist_id: str
    score: float
    method: str  # "baseline" or "proposed"
    mos: float | None = None


def _check_pair(ref, dist):
    if np.shape(ref) != np.shape(dist):
        raise DimensionError(f"reference {np.shape(ref)} and distorted {np.shape(dist)} differ in size")


def unique_features(model, img):
    z = sae.encode(model.sae, model.preprocess(img))
    z = np.where(z < model.act_threshold, 0.0, z)
    return z.ravel()


def unique_score(model, ref, dist, ref_id="ref", dist_id="dist", mos=None):
    _check_pair(ref, dist)
    score = srcc(unique_features(model, ref), unique_features(model, dist))
    return QualityRecord(ref_id, dist_id, score, "baseline", mos)


def _rescale_open_unit(u, axis=None):
    lo = u.min(axis=axis, keepdims=True)
    hi = u.max(axis=axis, keepdims=True)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    t = np.where(span > 0, (u - lo) / safe, 0.5)
    return LOGIT_EPS + (1.0 - 2.0 * LOGIT_EPS) * t


def surprisal_project(model, img, gradient=None, rescale="patch", raw=False, threshold=False):
    """Project whitened patches onto the decoder surprisal of the image.

    Parameters
    ----------
    model : IqaModel
    img : ndarray, shape (H, W, 3)
    gradient : ndarray, shape (192, h), optional
        Decoder gradient to project onto. Defaults to the image's own
        ``decoder_surprisal``.
    rescale : {"patch", "image"}
        Min-max range over which projections are squeezed into (0, 1)
        before the inverse sigmoid: each patch's own latent vector, or the
        whole image. Constant ranges map to 0.5.
    raw : bool
        Skip the rescale and inverse sigmoid, keeping raw projections.
    threshold : bool
        Zero projections whose magnitude falls below ``act_threshold``.

    Returns
    -------
    ndarray, shape (P * 2h,)
        Per patch, ``|v|`` followed by ``sign(v)``.
    """
    p = model.preprocess(img)
    g = sae.decoder_surprisal(model.sae, p) if gradient is None else gradient
    u = p @ g
    if raw:
        v = u
    else:
        v = logit(_rescale_open_unit(u, axis=None if rescale == "image" else 1), LOGIT_EPS)
    if threshold:
        v = np.where(np.abs(v) < model.act_threshold, 0.0, v)
    return np.concatenate([np.abs(v), np.sign(v)], axis=1).ravel()


def surprisal_score(model, ref, dist, ref_id="ref", dist_id="dist", mos=None, cross=False, **kw):
    """Rank-correlate the projected features of both images.

    With ``cross=True`` the distorted image is projected onto the
    reference's gradient instead of its own.
    """
    _check_pair(ref, dist)
    fr = surprisal_project(model, ref, **kw)
    g = sae.decoder_surprisal(model.sae, model.preprocess(ref)) if cross else None
    fd = surprisal_project(model, dist, gradient=g, **kw)
    return QualityRecord(ref_id, dist_id, srcc(fr, fd), "proposed", mos)


SCORERS = {"baseline": unique_score, "proposed": surprisal_score}


def score_pair(model, ref, dist, method, **kw):
    return SCORERS[method](model, ref, dist, **kw)


def training_patches(images, count, rng):
    """Random YGCr patches drawn evenly across ``images``."""
    per = np.full(len(images), count // len(images))
    per[: count % len(images)] += 1
    out = [make_patches(rgb_to_ygcr(img), "random", rng, int(k)) for img, k in zip(images, per) if k]
    return np.concatenate(out)


def fit_iqa_model(images, rng, n_patches=10000, hidden=400, cfg=None, eps=WHITEN_EPS, **sae_kw):
    """Whitening plus autoencoder training. Returns ``(model, loss_trace)``."""
    patches = training_patches(images, n_patches, rng)
    mean, zca = fit_whitening(patches, eps)
    white = (patches - mean) @ zca
    init = sae.SparseAutoencoder.init(PATCH_DIM, hidden, rng, **sae_kw)
    result = sae.train(init, white, cfg or sae.default_sae_sgd(), rng)
    return IqaModel(result.model, mean, zca, whiten_eps=eps), result.loss_trace


def save_iqa_model(model, directory, extra=None):
    directory = Path(directory)
    sae.save_model(model.sae, directory)
    datakit.tensorfile_write(directory / "patch_mean.stsr", model.patch_mean)
    datakit.tensorfile_write(directory / "zca.stsr", model.zca)
    meta = {"act_threshold": model.act_threshold, "whiten_eps": model.whiten_eps}
    meta.update(extra or {})
    (directory / "iqa.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_iqa_model(directory):
    directory = Path(directory)
    meta_path = directory / "iqa.json"
    if not meta_path.is_file():
        raise datakit.MissingFileError(f"no iqa.json in {directory}; is this a trained model?")
    meta = json.loads(meta_path.read_text())
    return IqaModel(
        sae.load_model(directory),
        datakit.tensorfile_read(directory / "patch_mean.stsr"),
        datakit.tensorfile_read(directory / "zca.stsr"),
        act_threshold=meta["act_threshold"],
        whiten_eps=meta["whiten_eps"],
    )
