"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The two desk experiments are run once per session and shared; the
determinism check reruns them with the same seed and compares CSV bytes.
"""
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from surprisal import datakit as dk
from surprisal import cli, experiments, gradcheck, head, iqa, metrics, sae
from surprisal.numcore import make_rng, sym_eig

from .test_metrics import pearson_def, random_vectors, rank_avg, tau_b_pairs

GOLDEN = Path(__file__).parent / "golden"

pytestmark = pytest.mark.slow


def verdict(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} | {detail}", flush=True)


@pytest.fixture(scope="session")
def iqa_run():
    return experiments.run_iqa_benchmark(experiments.IqaBenchConfig())


@pytest.fixture(scope="session")
def robust_run():
    return experiments.run_robustness(experiments.RobustConfig())


def test_criterion_1_gradient_oracles(capsys):
    t0 = time.perf_counter()
    reports = gradcheck.run_all(cases=1000, seed=0)
    secs = time.perf_counter() - t0
    ok = all(r.passed and r.cases >= 1000 for r in reports) and secs <= 60
    detail = ", ".join(f"{r.suite} {r.cases - r.failures}/{r.cases} max rel err {r.max_rel_err:.2e}" for r in reports)
    verdict(capsys, 1, ok, f"{detail}; {secs:.1f} s")
    assert ok


def test_criterion_2_recomposition(capsys):
    rng = make_rng(2)
    worst = 0.0
    for _ in range(10_000):
        d, h = (int(v) for v in rng.integers(1, 9, size=2))
        m = sae.SparseAutoencoder.init(
            d, h, rng, beta=float(rng.uniform(0, 5)), lam=float(rng.uniform(0, 0.01)),
            rho=float(rng.uniform(0.01, 0.2)), l2_on=("both", "decoder")[int(rng.integers(2))],
        )
        x = rng.normal(size=(int(rng.integers(1, 6)), d))
        ga = sae.generative_action(m, x)
        # independent recomputation of every term
        z = 1.0 / (1.0 + np.exp(-(x @ m.w_enc.T + m.b_enc)))
        mse = np.mean(np.sum((x - z @ m.w_dec.T - m.b_dec) ** 2, axis=1))
        zbar = z.mean(axis=0)
        kl = np.sum(m.rho * np.log(m.rho / zbar) + (1 - m.rho) * np.log((1 - m.rho) / (1 - zbar)))
        l2 = np.sum(m.w_dec**2) + (np.sum(m.w_enc**2) if m.l2_on == "both" else 0.0)
        scale = max(1.0, abs(ga.value))
        worst = max(
            worst,
            abs(ga.value - (ga.mse_term + m.beta * ga.kl_term + m.lam * ga.l2_term)) / scale,
            abs(ga.mse_term - mse) / max(1.0, mse),
            abs(ga.kl_term - kl) / max(1.0, kl),
            abs(ga.l2_term - l2) / max(1.0, l2),
        )
        # cross-entropy: scalar, batch, and KL/entropy split agree
        n = int(rng.integers(2, 11))
        y = rng.normal(0, 3, size=(3, n))
        labels = rng.integers(0, n, size=3)
        ce = [head.ce_loss(row, int(c))[0] for row, c in zip(y, labels)]
        worst = max(worst, abs(head.ce_batch(y, labels)[0] - np.mean(ce)) / max(1.0, np.mean(ce)))
        dec = head.ce_decomposition(y[0], np.eye(n)[labels[0]])
        worst = max(worst, abs(dec.cross_entropy - ce[0]) / max(1.0, ce[0]), abs(dec.kl - ce[0]) / max(1.0, ce[0]))
        t = rng.dirichlet(np.ones(n))
        soft = head.ce_decomposition(y[1], t)
        logp = y[1] - y[1].max() - np.log(np.sum(np.exp(y[1] - y[1].max())))
        worst = max(
            worst,
            abs(soft.cross_entropy - (soft.kl + soft.target_entropy)) / max(1.0, soft.cross_entropy),
            abs(soft.cross_entropy + np.sum(t * logp)) / max(1.0, soft.cross_entropy),
        )
    ok = worst <= 1e-9
    verdict(capsys, 2, ok, f"10000 cases, worst relative deviation {worst:.2e}")
    assert ok


def test_criterion_3_whitening(capsys):
    t0 = time.perf_counter()
    rng = make_rng(3)
    d = iqa.PATCH_DIM
    mix = rng.normal(size=(d, d)) * np.exp(-np.arange(d) / 40.0)
    x = rng.normal(size=(5000, d)) @ mix.T + rng.normal(size=d)
    eps = iqa.WHITEN_EPS
    mean, zca = iqa.fit_whitening(x, eps)
    w = (x - mean) @ zca
    lam, q = sym_eig((x - mean).T @ (x - mean) / len(x))
    cq = q.T @ (w.T @ w / len(x)) @ q
    off = np.abs(cq - np.diag(np.diag(cq))).max()
    band = lam / (lam + eps)
    diag_err = np.abs(np.diag(cq) - band).max()
    secs = time.perf_counter() - t0
    ok = off <= 1e-6 and diag_err <= 1e-9 and secs <= 60
    verdict(
        capsys, 3, ok,
        f"max off-diagonal {off:.1e}, diagonal vs lam/(lam+eps) {diag_err:.1e}, "
        f"band [{band.min():.3g}, {band.max():.6f}]; {secs:.1f} s",
    )
    assert ok


def test_criterion_4_metrics(capsys):
    rng = make_rng(4)
    worst = 0.0
    count = 0
    while count < 500:
        for a, b in random_vectors(rng, 500 - count):
            count += 1
            worst = max(
                worst,
                abs(metrics.srcc(a, b) - pearson_def(rank_avg(a), rank_avg(b))),
                abs(metrics.krcc(a, b) - tau_b_pairs(a, b)),
                abs(metrics.plcc(a, b) - pearson_def(a, b)),
            )
    same = [metrics.significance(r, r, n, n) for r in (0.1, 0.5, 0.908) for n in (10, 450)]
    table = metrics.significance(0.908, 0.888, 450, 450)
    ok = worst <= 1e-12 and all(s == 0 for s in same) and table == 0
    verdict(capsys, 4, ok, f"500 vectors, worst oracle deviation {worst:.1e}; significance(0.908, 0.888, 450) = {table}")
    assert ok


def test_criterion_5_desk_iqa(capsys, iqa_run):
    r = iqa_run
    n_img = len({row[0] for row in r.scores})
    worst = min(abs(v) for v in r.per_kind.values())
    ok = r.passed(0.8) and n_img >= 20 and r.config.hidden == 400 and r.config.n_patches == 10_000 and r.seconds <= 600
    per = "; ".join(f"{m}/{k} {abs(v):.3f}" for (m, k), v in sorted(r.per_kind.items()))
    verdict(capsys, 5, ok, f"{n_img} images, min |SRCC| {worst:.3f}, identity {r.identity_ok}, {r.seconds:.0f} s; {per}")
    assert ok


def test_criterion_6_desk_robustness(capsys, robust_run):
    r = robust_run
    secs_ok = r.seconds <= 900
    ok = r.passed() and secs_ok
    lg = ", ".join(f"{100 * g:+.2f}" for g in r.level_gains())
    verdict(
        capsys, 6, ok,
        f"clean perception acc {r.clean[0]:.4f}, mean gain {r.mean_gain_pp():+.2f} pp, "
        f"level gains [{lg}] pp, trend SRCC {r.trend():.2f}, {r.seconds:.0f} s",
    )
    assert ok


def test_criterion_7_determinism(capsys, iqa_run, robust_run, tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    iqa_run.write(first)
    robust_run.write(first)
    experiments.run_iqa_benchmark(iqa_run.config).write(second)
    experiments.run_robustness(robust_run.config).write(second)
    for out in (first, second):
        assert cli.dispatch(["gradcheck", "--cases", "1000", "--seed", "0", "--out", str(out)]) == 0
    capsys.readouterr()
    names = sorted(p.name for p in first.glob("*.csv"))
    same = [n for n in names if (first / n).read_bytes() == (second / n).read_bytes()]
    ok = same == names and len(names) == 5
    verdict(capsys, 7, ok, f"{len(same)}/{len(names)} CSVs byte-identical on rerun: {', '.join(names)}")
    assert ok


def test_criterion_8_formats(capsys, tmp_path):
    rng = make_rng(8)
    checked = 0
    for name in ("small_f32", "small_f64", "empty"):
        raw = (GOLDEN / f"{name}.stsr").read_bytes()
        assert dk.tensorfile_dumps(dk.tensorfile_loads(raw)) == raw
        checked += 1
    raw_ppm = (GOLDEN / "tiny.ppm").read_bytes()
    assert dk.ppm_dumps(dk.ppm_loads(raw_ppm)) == raw_ppm
    bundle = dk.load_feature_bundle(GOLDEN / "bundle")
    dk.save_feature_bundle(bundle, tmp_path / "bundle")
    for f in (GOLDEN / "bundle").iterdir():
        assert (tmp_path / "bundle" / f.name).read_bytes() == f.read_bytes()
    checked += 2

    crashes = []
    trials = 0

    def expect_format_error(fn, *args):
        nonlocal trials
        trials += 1
        try:
            fn(*args)
        except dk.FormatError:
            pass
        except Exception as exc:  # anything else is a crash
            crashes.append(repr(exc))

    blobs = [(GOLDEN / f"{n}.stsr").read_bytes() for n in ("small_f32", "small_f64")]
    blobs += [dk.tensorfile_dumps(rng.normal(size=tuple(rng.integers(0, 5, size=k)))) for k in range(4)]
    for buf in blobs:
        for cut in range(len(buf)):
            expect_format_error(dk.tensorfile_loads, buf[:cut])
    for cut in range(len(raw_ppm)):
        expect_format_error(dk.ppm_loads, raw_ppm[:cut])
    fuzz = tmp_path / "fuzz"
    for f in sorted((GOLDEN / "bundle").iterdir()):
        raw = f.read_bytes()
        for cut in range(len(raw)):
            shutil.rmtree(fuzz, ignore_errors=True)
            shutil.copytree(GOLDEN / "bundle", fuzz)
            (fuzz / f.name).write_bytes(raw[:cut])
            expect_format_error(dk.load_feature_bundle, fuzz)
    ok = not crashes
    verdict(capsys, 8, ok, f"{checked} golden artifacts bit-exact, {trials} truncations, {len(crashes)} crashes")
    assert ok, crashes[:5]
