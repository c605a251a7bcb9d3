"""Data plumbing: file formats, distortions and synthetic datasets.

File formats
------------
TensorFile (``.stsr``)::

    offset  size        field
    0       4           magic b"STSR"
    4       1           version (1)
    5       1           dtype (0 = float32, 1 = float64)
    6       1           ndim
    7       4 * ndim    dims, uint32 little-endian
    ...     prod * sz   payload, row-major little-endian

PPM: binary P6 only, maxval 255; pixels map to ``v / 255``.

FeatureBundle: a directory holding ``manifest.json`` that names four
TensorFiles (``z`` M x d, ``labels`` M, ``w_l`` d x N, ``b_l`` N) plus
``d``, ``N`` and a free-text ``source``. Labels are stored 1-based.

Benchmark manifest: CSV with header ``ref_path,dist_path,mos[,mos_std]``;
relative paths resolve against the manifest's directory.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import ndimage

from .numcore import make_rng

MAGIC = b"STSR"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}
MAX_NDIM = 32
MAX_PAYLOAD_BYTES = 1 << 40


class FormatError(ValueError):
    """Base class for malformed-file errors. ``code`` identifies the failure."""

    code = "format"


class BadMagicError(FormatError):
    code = "bad_magic"


class UnsupportedVersionError(FormatError):
    code = "bad_version"


class BadDtypeError(FormatError):
    code = "bad_dtype"


class DimOverflowError(FormatError):
    code = "dim_overflow"


class LengthMismatchError(FormatError):
    code = "length_mismatch"


class UnsupportedFormatError(FormatError):
    code = "unsupported_format"


class MalformedHeaderError(FormatError):
    code = "malformed_header"


class TruncatedPayloadError(FormatError):
    code = "truncated_payload"


class MissingFileError(FormatError, FileNotFoundError):
    code = "missing_file"


class BundleDimensionError(FormatError):
    code = "dim_mismatch"


class LabelRangeError(FormatError):
    code = "label_range"


class ManifestError(FormatError):
    code = "manifest"


# --------------------------------------------------------------------------
# TensorFile


def tensorfile_dumps(arr):
    arr = np.asarray(arr)
    if arr.dtype not in _CODES:
        if np.issubdtype(arr.dtype, np.number) or arr.dtype == bool:
            arr = arr.astype(np.float64)
        else:
            raise BadDtypeError(f"cannot store dtype {arr.dtype}")
    code = _CODES[arr.dtype]
    if arr.ndim > MAX_NDIM or any(s >= 2**32 for s in arr.shape):
        raise DimOverflowError(f"shape {arr.shape} does not fit the header")
    header = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def tensorfile_loads(buf):
    buf = bytes(buf)
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError("missing STSR magic")
    if len(buf) < 7:
        raise LengthMismatchError("header truncated")
    version, code, ndim = struct.unpack_from("<BBB", buf, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    if code not in _DTYPES:
        raise BadDtypeError(f"unknown dtype code {code}")
    if ndim > MAX_NDIM:
        raise DimOverflowError(f"ndim {ndim} exceeds {MAX_NDIM}")
    off = 7 + 4 * ndim
    if len(buf) < off:
        raise LengthMismatchError("dims truncated")
    dims = struct.unpack_from(f"<{ndim}I", buf, 7)
    dtype = _DTYPES[code]
    count = 1
    for d in dims:
        count *= d
    nbytes = count * dtype.itemsize
    if nbytes > MAX_PAYLOAD_BYTES:
        raise DimOverflowError(f"dims {dims} describe {nbytes} bytes")
    if len(buf) - off != nbytes:
        raise LengthMismatchError(f"payload has {len(buf) - off} bytes, header implies {nbytes}")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off).reshape(dims)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def tensorfile_write(path, arr):
    Path(path).write_bytes(tensorfile_dumps(arr))


def tensorfile_read(path):
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such tensor file: {path}")
    return tensorfile_loads(path.read_bytes())


# --------------------------------------------------------------------------
# PPM


def _ppm_tokens(buf, count):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens = []
    i = 0
    n = len(buf)
    while len(tokens) < count:
        while i < n and buf[i : i + 1].isspace():
            i += 1
        if i < n and buf[i : i + 1] == b"#":
            while i < n and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not buf[i : i + 1].isspace() and buf[i : i + 1] != b"#":
            i += 1
        if start == i:
            raise MalformedHeaderError("PPM header truncated")
        tokens.append(buf[start:i])
    # exactly one whitespace byte separates maxval from the raster
    if i >= n or not buf[i : i + 1].isspace():
        raise MalformedHeaderError("PPM header not terminated")
    return tokens, i + 1


def ppm_loads(buf):
    buf = bytes(buf)
    if buf[:2] == b"P3":
        raise UnsupportedFormatError("ASCII PPM (P3) is not supported; convert to binary P6")
    if buf[:2] != b"P6":
        raise UnsupportedFormatError("not a binary PPM (P6) file")
    tokens, off = _ppm_tokens(buf[2:], 3)
    off += 2
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise MalformedHeaderError(f"non-integer PPM header field: {exc}") from None
    if w <= 0 or h <= 0:
        raise MalformedHeaderError(f"bad PPM size {w}x{h}")
    if maxval != 255:
        raise UnsupportedFormatError(f"only maxval 255 is supported, got {maxval}")
    need = w * h * 3
    if len(buf) - off < need:
        raise TruncatedPayloadError(f"PPM raster has {len(buf) - off} bytes, need {need}")
    raw = np.frombuffer(buf, dtype=np.uint8, count=need, offset=off)
    return raw.reshape(h, w, 3).astype(np.float64) / 255.0


def ppm_dumps(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 image, got {img.shape}")
    h, w, _ = img.shape
    raw = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + raw.tobytes()


def read_ppm(path):
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such image: {path}")
    return ppm_loads(path.read_bytes())


def write_ppm(img, path):
    Path(path).write_bytes(ppm_dumps(img))


def quantize(img):
    """Round an image onto the 8-bit grid so it survives a PPM round trip."""
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255) / 255.0


# --------------------------------------------------------------------------
# FeatureBundle


@dataclass
class FeatureBundle:
    z: np.ndarray  # (M, d) penultimate features
    labels: np.ndarray  # (M,) 0-based class indices
    w_l: np.ndarray  # (d, N)
    b_l: np.ndarray  # (N,)
    source: str = ""

    @property
    def d(self):
        return self.w_l.shape[0]

    @property
    def n_classes(self):
        return self.w_l.shape[1]


def save_feature_bundle(bundle, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensorfile_write(directory / "z.stsr", bundle.z)
    tensorfile_write(directory / "labels.stsr", np.asarray(bundle.labels, dtype=np.float64) + 1)
    tensorfile_write(directory / "w_l.stsr", bundle.w_l)
    tensorfile_write(directory / "b_l.stsr", bundle.b_l)
    manifest = {
        "z": "z.stsr",
        "labels": "labels.stsr",
        "w_l": "w_l.stsr",
        "b_l": "b_l.stsr",
        "d": int(bundle.d),
        "N": int(bundle.n_classes),
        "source": bundle.source,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_feature_bundle(directory):
    directory = Path(directory)
    mpath = directory / "manifest.json"
    if not mpath.is_file():
        raise MissingFileError(f"bundle manifest not found: {mpath}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"bundle manifest is not valid JSON: {exc}") from None
    for key in ("z", "labels", "w_l", "b_l", "d", "N"):
        if key not in manifest:
            raise ManifestError(f"bundle manifest lacks {key!r}")
    d, n = int(manifest["d"]), int(manifest["N"])
    z = tensorfile_read(directory / manifest["z"])
    labels = tensorfile_read(directory / manifest["labels"])
    w_l = tensorfile_read(directory / manifest["w_l"])
    b_l = tensorfile_read(directory / manifest["b_l"])
    if w_l.shape != (d, n):
        raise BundleDimensionError(f"w_l has dims {w_l.shape}, manifest says ({d}, {n})")
    if b_l.shape != (n,):
        raise BundleDimensionError(f"b_l has dims {b_l.shape}, manifest says ({n},)")
    if z.ndim != 2 or z.shape[1] != d:
        raise BundleDimensionError(f"z has dims {z.shape}, expected (M, {d})")
    if labels.shape != (z.shape[0],):
        raise BundleDimensionError(f"labels have dims {labels.shape}, expected ({z.shape[0]},)")
    if labels.size and (
        np.any(labels != np.round(labels)) or labels.min() < 1 or labels.max() > n
    ):
        raise LabelRangeError(f"labels must be integers in [1, {n}]")
    return FeatureBundle(
        z=z.astype(np.float64),
        labels=labels.astype(np.int64) - 1,
        w_l=w_l.astype(np.float64),
        b_l=b_l.astype(np.float64),
        source=str(manifest.get("source", "")),
    )


# --------------------------------------------------------------------------
# Benchmark manifest


@dataclass(frozen=True)
class PairRecord:
    ref_path: Path
    dist_path: Path
    mos: float
    mos_std: float | None = None


def load_manifest(path):
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"manifest not found: {path}")
    base = path.parent
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        for col in ("ref_path", "dist_path", "mos"):
            if col not in fields:
                raise ManifestError(f"manifest header lacks column {col!r}")
        extra = set(fields) - {"ref_path", "dist_path", "mos", "mos_std"}
        if extra:
            raise ManifestError(f"unknown manifest columns: {sorted(extra)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                mos = float(row["mos"])
                std = row.get("mos_std")
                std = float(std) if std not in (None, "") else None
            except ValueError:
                raise ManifestError(f"line {lineno}: non-numeric mos/mos_std") from None
            rows.append(PairRecord(base / row["ref_path"], base / row["dist_path"], mos, std))
    if not rows:
        raise ManifestError("manifest has no rows")
    return rows


def write_manifest(rows, path):
    path = Path(path)
    with_std = any(r.mos_std is not None for r in rows)
    header = ["ref_path", "dist_path", "mos"] + (["mos_std"] if with_std else [])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in rows:
            line = [
                os.path.relpath(r.ref_path, path.parent),
                os.path.relpath(r.dist_path, path.parent),
                repr(float(r.mos)),
            ]
            if with_std:
                line.append("" if r.mos_std is None else repr(float(r.mos_std)))
            writer.writerow(line)


# --------------------------------------------------------------------------
# CIFAR-10 binary batches


def read_cifar10_batch(path):
    """Read a CIFAR-10 binary batch: records of 1 label byte + 3072 pixel bytes.

    Returns ``(images, labels)`` with images ``(n, 32, 32, 3)`` in [0, 1] and
    0-based labels.
    """
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % 3073:
        raise LengthMismatchError(f"{path}: size {raw.size} is not a multiple of 3073")
    rec = raw.reshape(-1, 3073)
    labels = rec[:, 0].astype(np.int64)
    imgs = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return imgs.astype(np.float64) / 255.0, labels


# --------------------------------------------------------------------------
# Distortions

DISTORTION_TABLE_VERSION = 1
DISTORTION_KINDS = ("gauss_noise", "gauss_blur", "impulse", "contrast", "brightness", "pixelate")

# per-kind severity for levels 1..5
SEVERITY = {
    "gauss_noise": (0.02, 0.04, 0.08, 0.12, 0.18),  # noise std
    "gauss_blur": (0.6, 1.0, 1.5, 2.0, 3.0),  # kernel sigma in pixels
    "impulse": (0.01, 0.03, 0.06, 0.10, 0.15),  # corrupted pixel fraction
    "contrast": (0.75, 0.55, 0.4, 0.25, 0.12),  # retained contrast factor
    "brightness": (0.05, 0.1, 0.15, 0.2, 0.3),  # additive shift
    "pixelate": (0.9, 0.8, 0.7, 0.6, 0.5),  # resampling scale
}


@dataclass(frozen=True)
class DistortionSpec:
    kind: str
    level: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SEVERITY:
            raise ValueError(f"unknown distortion kind {self.kind!r}; choose from {DISTORTION_KINDS}")
        if not 1 <= int(self.level) <= 5:
            raise ValueError(f"distortion level must be in 1..5, got {self.level}")

    @property
    def severity(self):
        return SEVERITY[self.kind][self.level - 1]


@lru_cache(maxsize=None)
def gaussian_kernel(sigma):
    radius = max(1, int(np.ceil(3.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    k /= k.sum()
    k.setflags(write=False)
    return k


def _pixelate(img, scale):
    # box downsample to scale * size, nearest upsample back
    h, w, _ = img.shape
    sh, sw = max(1, int(round(h * scale))), max(1, int(round(w * scale)))
    rows = (np.arange(h) * sh) // h
    cols = (np.arange(w) * sw) // w
    small = np.zeros((sh, sw, img.shape[2]))
    counts = np.zeros((sh, sw, 1))
    np.add.at(small, (rows[:, None], cols[None, :]), img)
    np.add.at(counts, (rows[:, None], cols[None, :]), 1.0)
    small /= counts
    return small[rows[:, None], cols[None, :]]


def distort(img, spec):
    """Apply one graded distortion; output is clamped to [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    s = spec.severity
    if spec.kind == "gauss_noise":
        rng = make_rng(spec.seed)
        out = img + s * rng.standard_normal(img.shape)
    elif spec.kind == "gauss_blur":
        k = gaussian_kernel(s)
        out = ndimage.convolve1d(img, k, axis=0, mode="reflect")
        out = ndimage.convolve1d(out, k, axis=1, mode="reflect")
    elif spec.kind == "impulse":
        rng = make_rng(spec.seed)
        u = rng.random(img.shape)
        out = img.copy()
        out[u < s / 2] = 0.0
        out[(u >= s / 2) & (u < s)] = 1.0
    elif spec.kind == "contrast":
        mean = img.mean(axis=(0, 1), keepdims=True)
        out = (img - mean) * s + mean
    elif spec.kind == "brightness":
        out = img + s
    elif spec.kind == "pixelate":
        out = _pixelate(img, s)
    return np.clip(out, 0.0, 1.0)


# --------------------------------------------------------------------------
# Synthetic images


def _smooth_field(rng, h, w, octaves=4):
    field = np.zeros((h, w))
    for o in range(octaves):
        cells = 2 ** (o + 1)
        coarse = rng.standard_normal((cells + 1, cells + 1))
        zoom = ndimage.zoom(coarse, ((h + cells) / (cells + 1), (w + cells) / (cells + 1)), order=3)
        field += zoom[:h, :w] / (2.0**o)
    field -= field.min()
    return field / max(field.max(), 1e-12)


def make_pristine_image(rng, size=64):
    """Procedural 'natural-looking' image: shaded background, shapes, texture."""
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w] / float(size)
    base = rng.random(3)
    tilt = rng.normal(0, 0.4, size=(2, 3))
    img = base + xx[..., None] * tilt[0] + yy[..., None] * tilt[1]
    img = 0.5 * img + 0.5 * _smooth_field(rng, h, w)[..., None] * rng.random(3)
    for _ in range(rng.integers(3, 7)):
        cy, cx = rng.random(2)
        ry, rx = 0.05 + 0.25 * rng.random(2)
        mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        color = rng.random(3)
        shade = 0.8 + 0.2 * _smooth_field(rng, h, w, octaves=2)
        img[mask] = (color * shade[..., None])[mask]
    for _ in range(rng.integers(1, 4)):
        y0, x0 = rng.integers(0, size - 8, size=2)
        y1, x1 = y0 + rng.integers(6, size // 2), x0 + rng.integers(6, size // 2)
        img[y0:y1, x0:x1] = rng.random(3)
    # fine stripes / texture
    freq = rng.uniform(4, 14)
    ang = rng.uniform(0, np.pi)
    stripes = np.sin(2 * np.pi * freq * (np.cos(ang) * xx + np.sin(ang) * yy))
    img = img + 0.08 * stripes[..., None] + 0.04 * (_smooth_field(rng, h, w, octaves=5)[..., None] - 0.5)
    img = (img - img.min()) / max(img.max() - img.min(), 1e-12)
    return quantize(0.05 + 0.9 * img)


def make_pristine_corpus(n=24, size=64, seed=0):
    rngs = make_rng(seed).spawn(n)
    return [make_pristine_image(r, size) for r in rngs]


def bundled_pristine_dir():
    return Path(__file__).resolve().parent / "data" / "pristine"


def load_bundled_pristine():
    """The pristine PPM images shipped with the package, in file-name order."""
    files = sorted(bundled_pristine_dir().glob("*.ppm"))
    if not files:
        raise MissingFileError(f"no bundled images under {bundled_pristine_dir()}")
    return [read_ppm(f) for f in files]


@dataclass
class LabelledImages:
    images: np.ndarray  # (n, H, W, 3)
    labels: np.ndarray  # (n,) 0-based

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class BlobClassParams:
    color: tuple
    center: tuple
    radius: tuple
    freq: float
    angle: float


def class_params(classes=10, seed=1234):
    """Fixed generative parameters per class; a function of ``seed`` only.

    Colours are spread evenly in hue, texture orientation evenly in angle.
    """
    rng = make_rng(seed)
    out = []
    for c in range(classes):
        hue = (c / classes + rng.uniform(-0.02, 0.02)) % 1.0
        rgb = 0.5 + 0.35 * np.cos(2 * np.pi * (hue - np.array([0.0, 1 / 3, 2 / 3])))
        out.append(
            BlobClassParams(
                color=tuple(rgb),
                center=tuple(rng.uniform(0.35, 0.65, 2)),
                radius=tuple(rng.uniform(0.2, 0.32, 2)),
                freq=float(rng.uniform(2.0, 5.0)),
                angle=float(np.pi * c / classes),
            )
        )
    return out


def _blob_image(p, rng, size, jitter):
    yy, xx = np.mgrid[0:size, 0:size] / float(size)
    cy = p.center[0] + rng.normal(0, jitter * 0.06)
    cx = p.center[1] + rng.normal(0, jitter * 0.06)
    ry = p.radius[0] * np.exp(rng.normal(0, jitter * 0.1))
    rx = p.radius[1] * np.exp(rng.normal(0, jitter * 0.1))
    r2 = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
    blob = np.exp(-r2)
    ang = p.angle + rng.normal(0, jitter * 0.1)
    phase = rng.uniform(0, 2 * np.pi)
    tex = 0.5 + 0.5 * np.sin(2 * np.pi * p.freq * (np.cos(ang) * xx + np.sin(ang) * yy) + phase)
    color = np.clip(np.asarray(p.color) + rng.normal(0, jitter * 0.04, 3), 0, 1)
    bg = rng.uniform(0.35, 0.65) + rng.normal(0, 0.02 * jitter, 3)
    img = bg * (1 - blob[..., None]) + blob[..., None] * color * (0.7 + 0.3 * tex[..., None])
    img = img + rng.normal(0, 0.03 * jitter, img.shape)
    return np.clip(img, 0, 1)


def make_synthetic_dataset(n_per_class, classes=10, seed=0, size=32, jitter=1.0, params_seed=1234):
    """Class-conditioned textured blobs; sample order interleaves classes.

    The class parameters depend on ``params_seed`` only, so train and test
    splits drawn with different ``seed`` share the same classes.
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    params = class_params(classes, params_seed)
    rng = make_rng(seed)
    imgs = np.empty((n_per_class * classes, size, size, 3))
    labels = np.empty(n_per_class * classes, dtype=np.int64)
    k = 0
    for _ in range(n_per_class):
        for c in range(classes):
            imgs[k] = _blob_image(params[c], rng, size, jitter)
            labels[k] = c
            k += 1
    return LabelledImages(imgs, labels)


def make_train_test(n_train_per_class, n_test_per_class, classes=10, seed=0, **kw):
    """Deterministic train/test split; the two halves use disjoint RNG streams."""
    s_train, s_test = np.random.SeedSequence(seed).spawn(2)
    train = make_synthetic_dataset(n_train_per_class, classes, int(s_train.generate_state(1)[0]), **kw)
    test = make_synthetic_dataset(n_test_per_class, classes, int(s_test.generate_state(1)[0]), **kw)
    return train, test


def dataset_hash(ds):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(ds.images, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(ds.labels, dtype="<i8").tobytes())
    return h.hexdigest()
