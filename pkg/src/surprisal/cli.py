"""Command-line entry point: ``surprisal <command> [flags]``.

Every command accepts ``--seed``, ``--out`` and ``--config FILE``. A config
file is a JSON object whose keys are the command's flag names (dashes as
underscores); unknown keys are rejected. Explicit flags override it. Each
run writes the fully resolved parameters to ``<out>/config.json``, which can
be fed back through ``--config`` to reproduce the run.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Failures print one
JSON line ``{"error": <code>, "message": <text>}`` to stderr.
"""
from __future__ import annotations

import os

_threads = os.environ.get("SURPRISAL_THREADS")
if _threads and _threads.isdigit() and int(_threads) > 0:
    # numpy reads these when first imported
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
import warnings  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import __version__, datakit, experiments, gradcheck, head, iqa, metrics, sae  # noqa: E402
from . import surprisal as sp  # noqa: E402
from .numcore import HEAD_SGD, SgdConfig, make_rng  # noqa: E402

log = logging.getLogger("surprisal")

# keys that never appear in a config echo
_INTERNAL = {"command", "config", "func", "verbose"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fail(code, message, status):
    print(json.dumps({"error": code, "message": " ".join(str(message).split())}), file=sys.stderr)
    return status


def _check_threads():
    if _threads is not None and not (_threads.isdigit() and int(_threads) > 0):
        raise UsageError(f"SURPRISAL_THREADS must be a positive integer, got {_threads!r}")


# --------------------------------------------------------------------------
# config echo


def resolved_config(args):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in _INTERNAL}
    for k, v in cfg.items():
        if isinstance(v, Path):
            cfg[k] = str(v)
    return {"command": args.command, "version": __version__, **cfg}


def write_echo(args, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(resolved_config(args), indent=2) + "\n")


def _load_config(path, sub):
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    data = {k: v for k, v in data.items() if k not in ("command", "version")}
    known = {a.dest for a in sub._actions} - _INTERNAL - {"help"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    return data


# --------------------------------------------------------------------------
# report


def _svg_scatter(pred, mos, fit, title):
    w, h, pad = 480, 360, 40
    x0, x1 = float(np.min(pred)), float(np.max(pred))
    y0, y1 = float(np.min(mos)), float(np.max(mos))
    sx = (w - 2 * pad) / ((x1 - x0) or 1.0)
    sy = (h - 2 * pad) / ((y1 - y0) or 1.0)

    def px(x, y):
        return f"{pad + (x - x0) * sx:.2f},{h - pad - (y - y0) * sy:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<text x="{w / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{pad}" y1="{h - pad}" x2="{w - pad}" y2="{h - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{h - pad}" stroke="black"/>',
        f'<text x="{w / 2}" y="{h - 8}" text-anchor="middle" font-size="12">score</text>',
        f'<text x="12" y="{h / 2}" font-size="12" transform="rotate(-90 12 {h / 2})">MOS</text>',
    ]
    for x, y in zip(pred, mos):
        cx, cy = px(x, y).split(",")
        parts.append(f'<circle cx="{cx}" cy="{cy}" r="2.5" fill="steelblue"/>')
    if fit is not None and fit.kind == "logistic":
        xs = np.linspace(x0, x1, 100)
        ys = np.clip(metrics.logistic4(xs, *fit.params), y0, y1)
        parts.append(f'<polyline fill="none" stroke="crimson" points="{" ".join(px(a, b) for a, b in zip(xs, ys))}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def report(records, out_dir, scatter=False, reference="proposed", mos_std=None):
    """Write ``scores.csv`` and ``report.csv`` (and optionally ``scatter_<method>.svg``).

    Every file's content is computed before anything is written, so an
    invalid record list leaves no partial output. The significance column
    compares each method's PLCC with the ``reference`` method's: -1 means
    significantly worse than the reference, 0 statistically similar, 1
    better. It is empty when the reference method is absent. ``mos_std``
    maps ``(ref_id, dist_id)`` to a per-item spread for the outlier ratio.
    """
    records = list(records)
    if not records:
        raise ValueError("no quality records to report")
    if any(r.mos is None for r in records):
        raise ValueError("every record needs a MOS value for the metric report")
    methods = sorted({r.method for r in records})
    score_rows = [(r.ref_id, r.dist_id, r.method, r.score, r.mos) for r in records]
    reports, svgs = {}, {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for m in methods:
            pred = np.array([r.score for r in records if r.method == m])
            mos = np.array([r.mos for r in records if r.method == m])
            std = None
            if mos_std is not None:
                std = np.array([mos_std[(r.ref_id, r.dist_id)] for r in records if r.method == m])
            reports[m] = metrics.evaluate(pred, mos, std)
            if scatter:
                fit = metrics.logistic_fit(pred, mos) if pred.size >= 8 else None
                svgs[m] = _svg_scatter(pred, mos, fit, f"{m} (n={pred.size})")
    rows = []
    for m in methods:
        rep = reports[m]
        sig = ""
        if reference in reports:
            ref = reports[reference]
            if max(abs(rep.plcc), abs(ref.plcc)) < 1 and min(rep.n, ref.n) > 3:
                sig = metrics.significance(rep.plcc, ref.plcc, rep.n, ref.n)
        rows.append(
            (m, rep.n, rep.or_, rep.rmse, rep.plcc, rep.srcc, rep.krcc, rep.mapping, rep.as_row()["logistic_params"], sig)
        )
    header = ["method", "n", "or", "rmse", "plcc", "srcc", "krcc", "mapping", "logistic_params", "significance"]
    texts = {
        "scores.csv": experiments.csv_text(["ref_id", "dist_id", "method", "score", "mos"], score_rows),
        "report.csv": experiments.csv_text(header, rows),
    }
    texts.update({f"scatter_{m}.svg": s for m, s in svgs.items()})
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in texts.items():
        (out / name).write_text(text)
    return reports


def _print_table(reports):
    print(f"{'method':<10} {'n':>5} {'OR':>7} {'RMSE':>9} {'PLCC':>7} {'SRCC':>7} {'KRCC':>7}")
    for m, r in sorted(reports.items()):
        print(f"{m:<10} {r.n:>5} {r.or_:>7.3f} {r.rmse:>9.4f} {r.plcc:>7.3f} {r.srcc:>7.3f} {r.krcc:>7.3f}")


# --------------------------------------------------------------------------
# helpers


def _ppm_files(path):
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.ppm"))
        if not files:
            raise datakit.MissingFileError(f"no .ppm files in {p}")
        return files
    return [p]


def _sgd(lr, epochs, batch, momentum=0.9, wd=0.0):
    return SgdConfig(((0, lr),), momentum=momentum, weight_decay=wd, epochs=epochs, batch_size=batch)


def _save_dataset(ds, directory, split):
    datakit.tensorfile_write(Path(directory) / f"{split}_images.stsr", ds.images)
    datakit.tensorfile_write(Path(directory) / f"{split}_labels.stsr", ds.labels.astype(np.float64))


def _load_dataset(directory, split):
    imgs = datakit.tensorfile_read(Path(directory) / f"{split}_images.stsr")
    labels = datakit.tensorfile_read(Path(directory) / f"{split}_labels.stsr").astype(np.int64)
    if imgs.ndim != 4 or len(imgs) != len(labels):
        raise datakit.BundleDimensionError(f"images {imgs.shape} and labels {labels.shape} disagree")
    return datakit.LabelledImages(imgs.astype(np.float64), labels)


def _parse_distortion(text):
    if text is None:
        return None
    try:
        kind, level = text.split(":")
        datakit.DistortionSpec(kind, int(level))
        return kind, int(level)
    except ValueError:
        raise UsageError(f"--distortion expects KIND:LEVEL with a known kind and level 1-5, got {text!r}") from None


# --------------------------------------------------------------------------
# commands


def cmd_train_sae(args):
    images = [datakit.read_ppm(f) for f in _ppm_files(args.patches)] if args.patches else datakit.load_bundled_pristine()
    rng = make_rng(args.seed)
    dtype = np.float32 if args.precision == "f32" else np.float64
    patches = iqa.training_patches(images, args.n_patches, rng)
    mean, zca = iqa.fit_whitening(patches, args.eps)
    white = ((patches - mean) @ zca).astype(dtype)
    init = sae.SparseAutoencoder.init(
        iqa.PATCH_DIM, args.h, rng, dtype=dtype, beta=args.beta, lam=args.lam, rho=args.rho, l2_on=args.l2_on
    )
    result = sae.train(init, white, _sgd(args.lr, args.epochs, args.batch_size), rng)
    model = iqa.IqaModel(result.model, mean, zca, act_threshold=args.threshold, whiten_eps=args.eps)
    iqa.save_iqa_model(model, args.out, extra={"seed": args.seed})
    (Path(args.out) / "loss_trace.csv").write_text(
        experiments.csv_text(["epoch", "loss"], list(enumerate(result.loss_trace)))
    )
    write_echo(args, args.out)
    print(f"trained h={args.h} on {len(white)} patches: loss {result.loss_trace[0]:.4f} -> {result.loss_trace[-1]:.4f}")
    return 0


def _score_kw(args):
    return {"rescale": args.rescale, "raw": args.raw, "cross": args.cross}


def _score(model, method, ref, dist, ref_id, dist_id, mos, args):
    if method == "proposed":
        return iqa.surprisal_score(model, ref, dist, ref_id, dist_id, mos, **_score_kw(args))
    return iqa.unique_score(model, ref, dist, ref_id, dist_id, mos)


def _methods(args):
    return ["baseline", "proposed"] if args.method == "both" else [args.method]


def cmd_iqa_score(args):
    model = iqa.load_iqa_model(args.model)
    ref, dist = datakit.read_ppm(args.ref), datakit.read_ppm(args.dist)
    rows = []
    for m in _methods(args):
        rec = _score(model, m, ref, dist, Path(args.ref).name, Path(args.dist).name, None, args)
        rows.append((rec.ref_id, rec.dist_id, rec.method, rec.score, ""))
        print(f"{rec.method}\t{rec.score:.12g}")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "scores.csv").write_text(
            experiments.csv_text(["ref_id", "dist_id", "method", "score", "mos"], rows)
        )
        write_echo(args, args.out)
    return 0


def cmd_iqa_benchmark(args):
    if args.desk:
        cfg = experiments.IqaBenchConfig(
            seed=args.seed, n_patches=args.n_patches, hidden=args.h, epochs=args.epochs, rescale=args.rescale
        )
        res = experiments.run_iqa_benchmark(cfg, log=print)
        res.write(args.out)
        write_echo(args, args.out)
        for (m, k), v in sorted(res.per_kind.items()):
            print(f"{m:<9} {k:<12} |SRCC| {abs(v):.3f}")
        print(f"identity scores exactly 1: {res.identity_ok}")
        print("PASS" if res.passed() else "FAIL")
        return 0 if res.passed() else 1
    if not (args.manifest and args.model):
        raise UsageError("iqa-benchmark: needs --manifest and --model (or --desk)")
    model = iqa.load_iqa_model(args.model)
    pairs = datakit.load_manifest(args.manifest)
    cache = {}

    def img(p):
        if p not in cache:
            cache[p] = datakit.read_ppm(p)
        return cache[p]

    records = []
    for m in _methods(args):
        for pr in pairs:
            records.append(_score(model, m, img(pr.ref_path), img(pr.dist_path), pr.ref_path.name, pr.dist_path.name, pr.mos, args))
    stds = None
    if all(pr.mos_std is not None for pr in pairs):
        stds = {(pr.ref_path.name, pr.dist_path.name): pr.mos_std for pr in pairs}
    reports = report(records, args.out, scatter=args.scatter, mos_std=stds)
    write_echo(args, args.out)
    _print_table(reports)
    return 0


def cmd_distort(args):
    files = _ppm_files(args.input)
    kinds = datakit.DISTORTION_KINDS if args.kind == "all" else (args.kind,)
    levels = range(1, 6) if args.level == 0 else (args.level,)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for idx, f in enumerate(files):
        ref = datakit.read_ppm(f)
        for kind in kinds:
            for lv in levels:
                spec = datakit.DistortionSpec(kind, lv, seed=args.seed + idx)
                dst = out / f"{f.stem}_{kind}_{lv}.ppm"
                datakit.write_ppm(datakit.distort(ref, spec), dst)
                rows.append(datakit.PairRecord(f.resolve(), dst.resolve(), float(-lv)))
    datakit.write_manifest(rows, out / "manifest.csv")
    write_echo(args, out)
    print(f"wrote {len(rows)} distorted images and manifest.csv (mos = -level)")
    return 0


def cmd_make_dataset(args):
    train, test = datakit.make_train_test(args.n_train, args.n_test, args.classes, args.seed, jitter=args.jitter)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _save_dataset(train, out, "train")
    _save_dataset(test, out, "test")
    write_echo(args, out)
    (out / "hash.txt").write_text(f"train {datakit.dataset_hash(train)}\ntest {datakit.dataset_hash(test)}\n")
    print(f"train {len(train)} / test {len(test)} images -> {out}")
    return 0


def cmd_train_perception(args):
    train = _load_dataset(args.data, "train")
    cfg = SgdConfig(((0, args.lr), (max(1, args.epochs * 3 // 4), args.lr / 5)), 0.9, 5e-4, args.epochs, args.batch_size)
    net = head.train_perception(train, cfg, make_rng(args.seed), hidden=(args.hidden,))
    head.save_perception(net, args.out)
    write_echo(args, args.out)
    acc = metrics.accuracy(net.predict(train.images), train.labels)
    print(f"training accuracy {acc:.4f}")
    return 0


def cmd_extract_features(args):
    net = head.load_perception(args.perception)
    ds = _load_dataset(args.data, args.split)
    bundle = datakit.FeatureBundle(
        net.features(ds.images), ds.labels, net.head.w_l, net.head.b_l, source=f"{args.perception}:{args.split}"
    )
    datakit.save_feature_bundle(bundle, args.out)
    write_echo(args, args.out)
    print(f"{len(ds)} feature rows of width {bundle.d}; r_x width {bundle.d * bundle.n_classes}")
    return 0


def cmd_train_head(args):
    bundle = datakit.load_feature_bundle(args.bundle)
    ph = sp.PerceptionHead(bundle.w_l, bundle.b_l)
    r, _ = sp.surprisal_matrix(ph, bundle.z, args.mode)
    stats = sp.fit_norm(r, kind=args.norm)
    schedule = ((0, args.lr), (60, args.lr / 5), (120, args.lr / 25), (160, args.lr / 125))
    cfg = SgdConfig(tuple((e, lr) for e, lr in schedule if e < max(args.epochs, 1)), 0.9, 5e-4, args.epochs, 128)
    h, trace = head.train_head(sp.apply_norm(r, stats), bundle.labels, cfg, make_rng(args.seed), n_classes=ph.n_classes)
    out = Path(args.out)
    head.save_mlp(h, out, "head")
    sp.save_norm(stats, out)
    (out / "head_sgd.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    write_echo(args, out)
    acc = metrics.accuracy(head.head_predict(h, sp.apply_norm(r, stats)), bundle.labels)
    print(f"head training accuracy {acc:.4f}")
    return 0


def cmd_classify(args):
    dist = _parse_distortion(args.distortion)
    net = head.load_perception(args.perception)
    h = head.load_mlp(args.head, "head", head.MlpHead)
    stats = sp.load_norm(args.head)
    ds = _load_dataset(args.data, args.split)
    images = ds.images
    if dist:
        images = np.stack(
            [datakit.distort(im, datakit.DistortionSpec(dist[0], dist[1], seed=i)) for i, im in enumerate(images)]
        )
    res = head.infer(images, net, stats, h, args.mode)
    rows = [(i, int(y) + 1, int(c) + 1, int(f) + 1) for i, (y, c, f) in enumerate(zip(ds.labels, res.coarse, res.final))]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "predictions.csv").write_text(experiments.csv_text(["index", "label", "coarse", "final"], rows))
    accs = [("perception", metrics.accuracy(res.coarse, ds.labels)), ("pipeline", metrics.accuracy(res.final, ds.labels))]
    (out / "accuracy.csv").write_text(experiments.csv_text(["predictor", "accuracy"], accs))
    write_echo(args, out)
    for name, acc in accs:
        print(f"{name:<10} {acc:.4f}")
    return 0


def cmd_robust_benchmark(args):
    cfg = experiments.RobustConfig(
        seed=args.seed,
        n_train=args.n_train,
        n_test=args.n_test,
        jitter=args.jitter,
        perception_epochs=args.perception_epochs,
        mode=args.mode,
        norm=args.norm,
    )
    res = experiments.run_robustness(cfg, log=print)
    res.write(args.out)
    write_echo(args, args.out)
    print(res.summary_csv(), end="")
    print("PASS" if res.passed() else "FAIL")
    return 0 if res.passed() else 1


def cmd_gradcheck(args):
    reports = gradcheck.run_all(args.cases, args.seed, args.tol)
    rows = [(r.suite, r.cases, r.failures, r.max_rel_err, r.tolerance, int(r.passed)) for r in reports]
    text = experiments.csv_text(["suite", "cases", "failures", "max_rel_err", "tolerance", "passed"], rows)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "gradcheck.csv").write_text(text)
        write_echo(args, args.out)
    for r in reports:
        print(f"{r.suite:<15} {r.cases} cases  max rel err {r.max_rel_err:.2e}  {'PASS' if r.passed else 'FAIL'}")
    return 0 if all(r.passed for r in reports) else 1


# --------------------------------------------------------------------------
# parser


def _common(p, out_required=True):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=out_required, default=None, help="output directory")
    p.add_argument("--config", help="JSON file of flag values")


def _scoring_flags(p):
    p.add_argument("--method", choices=["baseline", "proposed", "both"], default="proposed")
    p.add_argument("--rescale", choices=["patch", "image"], default="patch")
    p.add_argument("--raw", action="store_true", help="skip rescale and inverse sigmoid")
    p.add_argument("--cross", action="store_true", help="project the distorted image onto the reference gradient")


def build_parser():
    parser = _Parser(prog="surprisal", description="Gradient-feature IQA and robust classification.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    subs = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = subs.add_parser("train-sae", help="whitening plus sparse autoencoder on image patches")
    _common(p)
    p.add_argument("--patches", help="PPM file or directory (default: bundled pristine images)")
    p.add_argument("--h", type=int, default=400)
    p.add_argument("--n-patches", type=int, default=10000)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--beta", type=float, default=sae.SPARSITY_WEIGHT)
    p.add_argument("--lam", type=float, default=sae.WEIGHT_DECAY)
    p.add_argument("--rho", type=float, default=sae.TARGET_ACTIVATION)
    p.add_argument("--l2-on", choices=["both", "decoder"], default="both")
    p.add_argument("--eps", type=float, default=iqa.WHITEN_EPS)
    p.add_argument("--threshold", type=float, default=iqa.ACT_THRESHOLD)
    p.add_argument("--precision", choices=["f64", "f32"], default="f64")
    p.set_defaults(func=cmd_train_sae)

    p = subs.add_parser("iqa-score", help="score one reference/distorted pair")
    _common(p, out_required=False)
    p.add_argument("--model", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--dist", required=True)
    _scoring_flags(p)
    p.set_defaults(func=cmd_iqa_score)

    p = subs.add_parser("iqa-benchmark", help="score a manifest and report metrics, or run the desk benchmark")
    _common(p)
    p.add_argument("--manifest")
    p.add_argument("--model")
    p.add_argument("--scatter", action="store_true", help="also write scatter_<method>.svg")
    p.add_argument("--desk", action="store_true", help="train on the bundled corpus and score graded distortions")
    p.add_argument("--h", type=int, default=400)
    p.add_argument("--n-patches", type=int, default=10000)
    p.add_argument("--epochs", type=int, default=30)
    _scoring_flags(p)
    p.set_defaults(func=cmd_iqa_benchmark)

    p = subs.add_parser("distort", help="write graded distortions of PPM images plus a manifest")
    _common(p)
    p.add_argument("--input", required=True, help="PPM file or directory")
    p.add_argument("--kind", choices=["all", *datakit.DISTORTION_KINDS], default="all")
    p.add_argument("--level", type=int, choices=range(0, 6), default=0, help="1-5, or 0 for all")
    p.set_defaults(func=cmd_distort)

    p = subs.add_parser("make-dataset", help="synthetic labelled images as TensorFiles")
    _common(p)
    p.add_argument("--n-train", type=int, default=200, help="per class")
    p.add_argument("--n-test", type=int, default=100, help="per class")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--jitter", type=float, default=1.0)
    p.set_defaults(func=cmd_make_dataset)

    p = subs.add_parser("train-perception", help="train the feed-forward classifier")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=64)
    p.set_defaults(func=cmd_train_perception)

    p = subs.add_parser("extract-features", help="write a FeatureBundle from a perception net")
    _common(p)
    p.add_argument("--perception", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "test"], default="train")
    p.set_defaults(func=cmd_extract_features)

    p = subs.add_parser("train-head", help="fit normalization and the head on a FeatureBundle")
    _common(p)
    p.add_argument("--bundle", required=True)
    p.add_argument("--epochs", type=int, default=HEAD_SGD.epochs)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--mode", choices=["filter", "full"], default="filter")
    p.add_argument("--norm", choices=["zscore", "minmax"], default="zscore")
    p.set_defaults(func=cmd_train_head)

    p = subs.add_parser("classify", help="three-step inference on a dataset split")
    _common(p)
    p.add_argument("--perception", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--distortion", help="KIND:LEVEL applied to every image first")
    p.add_argument("--mode", choices=["filter", "full"], default="filter")
    p.set_defaults(func=cmd_classify)

    p = subs.add_parser("robust-benchmark", help="desk robustness experiment")
    _common(p)
    defaults = experiments.RobustConfig()
    p.add_argument("--n-train", type=int, default=defaults.n_train, help="per class")
    p.add_argument("--n-test", type=int, default=defaults.n_test, help="per class")
    p.add_argument("--jitter", type=float, default=defaults.jitter)
    p.add_argument("--perception-epochs", type=int, default=defaults.perception_epochs)
    p.add_argument("--mode", choices=["filter", "full"], default="filter")
    p.add_argument("--norm", choices=["zscore", "minmax"], default="zscore")
    p.set_defaults(func=cmd_robust_benchmark)

    p = subs.add_parser("gradcheck", help="finite-difference oracle suites")
    _common(p, out_required=False)
    p.add_argument("--cases", type=int, default=1000)
    p.add_argument("--tol", type=float, default=gradcheck.TOLERANCE)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _parse(parser, argv):
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_usage().strip())
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.set_defaults(**_load_config(args.config, sub))
        args = parser.parse_args(argv)
    return args


def dispatch(argv=None):
    parser = build_parser()
    try:
        _check_threads()
        args = _parse(parser, argv)
    except UsageError as exc:
        print(parser.format_usage().strip(), file=sys.stderr)
        return _fail("usage", exc, 2)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    except datakit.FormatError as exc:
        return _fail(exc.code, exc, 1)
    except (ValueError, RuntimeError, OSError) as exc:
        return _fail(type(exc).__name__, exc, 1)


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
