"""Desk-scale experiments shared by the CLI and the acceptance suite.

Each runner takes a frozen config, is fully determined by it, and returns a
result object whose ``write`` method emits CSV files with fixed formatting
so reruns are byte-identical.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import datakit, head, iqa, metrics, sae
from . import surprisal as sp
from .numcore import HEAD_SGD, SgdConfig, make_rng


def fmt(x):
    """Fixed float formatting for CSV output."""
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return str(x)


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


# --------------------------------------------------------------------------
# IQA on the bundled pristine corpus


@dataclass(frozen=True)
class IqaBenchConfig:
    seed: int = 7
    n_images: int = 0  # 0 = every bundled image
    n_patches: int = 10000
    hidden: int = 400
    epochs: int = 30
    lr: float = 0.01
    batch_size: int = 100
    whiten_eps: float = iqa.WHITEN_EPS
    kinds: tuple = datakit.DISTORTION_KINDS
    rescale: str = "patch"


@dataclass
class IqaBenchResult:
    config: IqaBenchConfig
    scores: list  # (image, kind, level, method, score)
    per_kind: dict  # (method, kind) -> mean over images of SRCC(score, -level)
    identity_ok: dict  # method -> every score(x, x) == 1
    loss_trace: list
    seconds: float = 0.0

    def passed(self, threshold=0.8):
        kinds_ok = all(abs(v) >= threshold for v in self.per_kind.values())
        return kinds_ok and all(self.identity_ok.values())

    def scores_csv(self):
        return csv_text(["image", "kind", "level", "method", "score"], self.scores)

    def kinds_csv(self):
        rows = [(m, k, v, abs(v)) for (m, k), v in sorted(self.per_kind.items())]
        return csv_text(["method", "kind", "srcc_vs_neg_level", "abs_srcc"], rows)

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "iqa_scores.csv").write_text(self.scores_csv())
        (out / "iqa_kinds.csv").write_text(self.kinds_csv())


def run_iqa_benchmark(cfg=IqaBenchConfig(), images=None, log=None):
    """Train the autoencoder on the pristine corpus and score graded distortions.

    For each image and distortion kind the five levels are scored against the
    reference; the per-kind figure is the image-averaged rank correlation
    between score and negated level.
    """
    t0 = time.perf_counter()
    if images is None:
        images = datakit.load_bundled_pristine()
    if cfg.n_images:
        images = images[: cfg.n_images]
    rng = make_rng(cfg.seed)
    sgd = SgdConfig(((0, cfg.lr),), momentum=0.9, weight_decay=0.0, epochs=cfg.epochs, batch_size=cfg.batch_size)
    model, trace = iqa.fit_iqa_model(images, rng, cfg.n_patches, cfg.hidden, sgd, cfg.whiten_eps)
    if log:
        log(f"autoencoder trained: loss {trace[0]:.4f} -> {trace[-1]:.4f}")
    methods = {
        "baseline": lambda r, d: iqa.unique_score(model, r, d).score,
        "proposed": lambda r, d: iqa.surprisal_score(model, r, d, rescale=cfg.rescale).score,
    }
    scores = []
    identity_ok = {m: True for m in methods}
    table = {}
    for idx, ref in enumerate(images):
        for m, f in methods.items():
            s = f(ref, ref)
            identity_ok[m] &= s == 1.0
            scores.append((idx, "none", 0, m, s))
        for kind in cfg.kinds:
            dists = [datakit.distort(ref, datakit.DistortionSpec(kind, lv, seed=idx)) for lv in range(1, 6)]
            for m, f in methods.items():
                vals = [f(ref, d) for d in dists]
                scores.extend((idx, kind, lv, m, v) for lv, v in zip(range(1, 6), vals))
                table.setdefault((m, kind), []).append(metrics.srcc(vals, -np.arange(1, 6)))
    per_kind = {key: float(np.mean(v)) for key, v in table.items()}
    return IqaBenchResult(cfg, scores, per_kind, identity_ok, trace, time.perf_counter() - t0)


# --------------------------------------------------------------------------
# robustness of the three-step classifier


@dataclass(frozen=True)
class RobustConfig:
    seed: int = 0
    n_train: int = 500  # per class
    n_test: int = 100  # per class
    classes: int = 10
    jitter: float = 1.8
    perception_hidden: int = 64
    perception_epochs: int = 4
    mode: str = "filter"
    norm: str = "zscore"
    kinds: tuple = datakit.DISTORTION_KINDS
    head_sgd: SgdConfig = field(default=HEAD_SGD)

    def to_dict(self):
        d = asdict(self)
        d["head_sgd"] = self.head_sgd.to_dict()
        d["kinds"] = list(self.kinds)
        return d


@dataclass
class RobustResult:
    config: RobustConfig
    clean: tuple  # (perception-only, pipeline) accuracy on the clean test set
    table: list  # (kind, level, n, perception_acc, pipeline_acc)
    seconds: float = 0.0

    def gains(self):
        return np.array([p - f for _, _, _, f, p in self.table])

    def level_gains(self):
        g = {}
        for kind, lv, _, f, p in self.table:
            g.setdefault(lv, []).append(p - f)
        return np.array([np.mean(g[lv]) for lv in sorted(g)])

    def mean_gain_pp(self):
        return 100.0 * float(self.gains().mean())

    def trend(self):
        lg = self.level_gains()
        return metrics.srcc(np.arange(1, lg.size + 1), lg)

    def passed(self, min_clean=0.9, min_gain_pp=1.0, min_trend=0.6):
        return self.clean[0] >= min_clean and self.mean_gain_pp() >= min_gain_pp and self.trend() >= min_trend

    def table_csv(self):
        rows = [(k, lv, n, f, p, p - f) for k, lv, n, f, p in self.table]
        return csv_text(["kind", "level", "n", "perception_acc", "pipeline_acc", "gain"], rows)

    def summary_csv(self):
        lg = self.level_gains()
        rows = [
            ("clean_perception_acc", self.clean[0]),
            ("clean_pipeline_acc", self.clean[1]),
            ("mean_distorted_perception_acc", float(np.mean([r[3] for r in self.table]))),
            ("mean_distorted_pipeline_acc", float(np.mean([r[4] for r in self.table]))),
            ("mean_gain_pp", self.mean_gain_pp()),
            *((f"gain_pp_level_{i + 1}", 100.0 * float(v)) for i, v in enumerate(lg)),
            ("trend_srcc", self.trend()),
        ]
        return csv_text(["quantity", "value"], rows)

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "robust_table.csv").write_text(self.table_csv())
        (out / "robust_summary.csv").write_text(self.summary_csv())


def perception_sgd(epochs):
    return head.default_perception_sgd(epochs)


def run_robustness(cfg=RobustConfig(), log=None):
    """Perception net, clean-trained head, then accuracy on every (kind, level).

    The head never sees distorted data; it is fitted on gradient features of
    the clean training split only.
    """
    t0 = time.perf_counter()
    train, test = datakit.make_train_test(cfg.n_train, cfg.n_test, cfg.classes, cfg.seed, jitter=cfg.jitter)
    rng = make_rng(cfg.seed)
    net = head.train_perception(train, perception_sgd(cfg.perception_epochs), rng, hidden=(cfg.perception_hidden,))
    r, _ = sp.surprisal_matrix(net.head, net.features(train.images), cfg.mode)
    stats = sp.fit_norm(r, kind=cfg.norm)
    h, _ = head.train_head(sp.apply_norm(r, stats), train.labels, cfg.head_sgd, rng, n_classes=cfg.classes)
    out = head.infer(test.images, net, stats, h, cfg.mode)
    clean = (metrics.accuracy(out.coarse, test.labels), metrics.accuracy(out.final, test.labels))
    if log:
        log(f"clean accuracy: perception {clean[0]:.4f}, pipeline {clean[1]:.4f}")
    table = []
    for kind in cfg.kinds:
        for lv in range(1, 6):
            imgs = np.stack(
                [datakit.distort(im, datakit.DistortionSpec(kind, lv, seed=i)) for i, im in enumerate(test.images)]
            )
            out = head.infer(imgs, net, stats, h, cfg.mode)
            table.append(
                (kind, lv, len(test), metrics.accuracy(out.coarse, test.labels), metrics.accuracy(out.final, test.labels))
            )
    return RobustResult(cfg, clean, table, time.perf_counter() - t0)
