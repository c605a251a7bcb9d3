import math
import warnings

import numpy as np
import pytest

from surprisal import metrics


# -- independent oracles ------------------------------------------------------


def rank_avg(a):
    """Average ranks by O(n^2) counting: 1 + #smaller + (#equal - 1) / 2."""
    a = np.asarray(a, dtype=np.float64)
    return np.array([1 + np.sum(a < v) + (np.sum(a == v) - 1) / 2 for v in a])


def pearson_def(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = a.size
    ma, mb = sum(a) / n, sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = sum((x - ma) ** 2 for x in a)
    vb = sum((y - mb) ** 2 for y in b)
    return cov / math.sqrt(va * vb)


def tau_b_pairs(a, b):
    conc = disc = ties_a = ties_b = 0
    n = len(a)
    for i in range(n):
        for j in range(i + 1, n):
            da = np.sign(a[i] - a[j])
            db = np.sign(b[i] - b[j])
            if da == 0 and db == 0:
                continue
            if da == 0:
                ties_a += 1
            elif db == 0:
                ties_b += 1
            elif da == db:
                conc += 1
            else:
                disc += 1
    return (conc - disc) / math.sqrt((conc + disc + ties_a) * (conc + disc + ties_b))


def random_vectors(rng, count):
    for _ in range(count):
        n = int(rng.integers(4, 51))
        if rng.random() < 0.5:
            # small integer alphabet forces ties
            a = rng.integers(0, 6, size=n).astype(float)
            b = rng.integers(0, 6, size=n).astype(float)
        else:
            a = rng.normal(size=n)
            b = a * rng.normal() + rng.normal(size=n)
        if np.all(a == a[0]) or np.all(b == b[0]):
            continue
        yield a, b


# -- correlations ---------------------------------------------------------------


def test_perfect_agreement_and_inversion():
    a = np.array([0.3, 1.0, -2.0, 5.0, 4.0])
    for f in (metrics.srcc, metrics.krcc, metrics.plcc):
        assert f(a, a) == 1.0
    assert metrics.srcc(a, -a) == pytest.approx(-1.0, abs=1e-15)
    assert metrics.krcc(a, -a) == pytest.approx(-1.0, abs=1e-15)
    assert metrics.plcc(a, -a) == pytest.approx(-1.0, abs=1e-15)


def test_tau_b_hand_example():
    a, b = (1, 2, 2, 3), (1, 2, 3, 3)
    # 4 concordant, 0 discordant, one tie in each: 4 / sqrt(5 * 5)
    assert tau_b_pairs(a, b) == pytest.approx(0.8, abs=1e-15)
    assert metrics.krcc(a, b) == pytest.approx(0.8, abs=1e-12)


def test_correlations_match_oracles(rng):
    for a, b in random_vectors(rng, 500):
        assert abs(metrics.srcc(a, b) - pearson_def(rank_avg(a), rank_avg(b))) <= 1e-12
        assert abs(metrics.krcc(a, b) - tau_b_pairs(a, b)) <= 1e-12
        assert abs(metrics.plcc(a, b) - pearson_def(a, b)) <= 1e-12


def test_constant_totalization():
    c = np.ones(5)
    x = np.arange(5.0)
    assert metrics.srcc(c, c) == 1.0
    assert metrics.srcc(c, x) == 0.0
    assert metrics.krcc(x, c) == 0.0
    assert metrics.plcc(c, x) == 0.0


def test_rank_invariance(rng):
    for _ in range(50):
        a = rng.normal(size=20)
        b = a + rng.normal(size=20)
        assert metrics.srcc(np.exp(a), b ** 3) == pytest.approx(metrics.srcc(a, b), abs=1e-12)
        assert metrics.krcc(np.arctan(a), b) == pytest.approx(metrics.krcc(a, b), abs=1e-12)


def test_plcc_affine_invariance(rng):
    a = rng.normal(size=30)
    b = a + rng.normal(size=30)
    r = metrics.plcc(a, b)
    assert metrics.plcc(3 * a + 7, b) == pytest.approx(r, abs=1e-12)
    assert metrics.plcc(-2 * a, b) == pytest.approx(-r, abs=1e-12)


def test_length_mismatch():
    with pytest.raises(ValueError):
        metrics.srcc([1, 2, 3], [1, 2])


# -- logistic mapping -------------------------------------------------------------


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_logistic_affine_data():
    pred = np.linspace(0, 1, 30)
    fit = metrics.logistic_fit(pred, 4.0 * pred + 1.0)
    assert fit.rmse <= 1e-6


def test_logistic_recovers_params():
    s = np.linspace(-4, 6, 60)
    true = (5.0, 1.0, 1.0, 1.5)
    fit = metrics.logistic_fit(s, metrics.logistic4(s, *true))
    assert fit.kind == "logistic"
    np.testing.assert_allclose(fit.params, true, atol=1e-3)


def test_logistic_scale_invariant(rng):
    s = rng.uniform(0, 1, 80)
    mos = metrics.logistic4(s, 90, 10, 0.5, 0.1) + rng.normal(0, 3, 80)
    a = metrics.logistic_fit(s, mos)
    b = metrics.logistic_fit(1000 * s - 3, mos)
    assert abs(a.rmse - b.rmse) <= 1e-6


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_logistic_never_worse_than_affine(rng):
    for _ in range(10):
        s = rng.normal(size=40)
        mos = s + rng.normal(0, 2, 40)
        fit = metrics.logistic_fit(s, mos)
        design = np.column_stack([s, np.ones_like(s)])
        coef, *_ = np.linalg.lstsq(design, mos, rcond=None)
        assert fit.rmse <= metrics.rmse(design @ coef, mos) + 1e-12


def test_logistic_nonconvergence_falls_back(rng):
    s = rng.normal(size=30)
    mos = s + rng.normal(size=30)
    with pytest.warns(RuntimeWarning):
        fit = metrics.logistic_fit(s, mos, max_iter=2)
    assert fit.kind == "affine"


def test_logistic_needs_eight():
    with pytest.raises(ValueError):
        metrics.logistic_fit(np.arange(7.0), np.arange(7.0))


# -- outlier ratio, significance --------------------------------------------------


def test_outlier_ratio():
    assert metrics.outlier_ratio(np.zeros(6)) == 0.0
    assert metrics.outlier_ratio([0.0, 0.0, 0.0, 10.0], mos_std=[1.0] * 4) == 0.25
    # global threshold is twice the population std of the residuals
    r = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 10.0])
    assert metrics.outlier_ratio(r) == pytest.approx(1 / 9)


def test_significance_convention():
    assert metrics.significance(0.5, 0.5, 100, 100) == 0
    # the row comparing 0.908 with 0.888 on 450 images is not significant
    stat = metrics.fisher_z_statistic(0.908, 0.888, 450, 450)
    assert 1.4 < stat < 1.7
    assert metrics.significance(0.888, 0.908, 450, 450) == 0
    # atanh(0.95) - atanh(0.30) = 1.5222 over sqrt(2/97) = 0.1436 -> 10.6
    assert metrics.fisher_z_statistic(0.95, 0.30, 100, 100) == pytest.approx(10.601, abs=1e-3)
    assert metrics.significance(0.30, 0.95, 100, 100) == -1
    assert metrics.significance(0.95, 0.30, 100, 100) == 1


def test_significance_antisymmetric(rng):
    for _ in range(200):
        r1, r2 = rng.uniform(-0.99, 0.99, 2)
        n1, n2 = rng.integers(4, 500, 2)
        assert metrics.significance(r1, r2, n1, n2) == -metrics.significance(r2, r1, n2, n1)


def test_significance_rejects_degenerate():
    with pytest.raises(ValueError):
        metrics.significance(0.5, 0.4, 3, 100)
    with pytest.raises(ValueError):
        metrics.significance(1.0, 0.4, 30, 100)


def test_evaluate_report(rng):
    s = rng.uniform(0, 1, 50)
    mos = 100 * s + rng.normal(0, 5, 50)
    with warnings.catch_warnings():
        # near-linear data may push the logistic toward its affine limit
        warnings.simplefilter("ignore", RuntimeWarning)
        rep = metrics.evaluate(s, mos)
    assert rep.n == 50 and rep.srcc > 0.9 and rep.plcc > 0.9
    assert all(math.isfinite(v) for v in (rep.or_, rep.rmse, rep.plcc, rep.srcc, rep.krcc))
    row = rep.as_row()
    assert set(row) >= {"or_", "rmse", "plcc", "srcc", "krcc", "n", "logistic_params"}


# -- accuracy -----------------------------------------------------------------------


def test_accuracy():
    assert metrics.accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    with pytest.raises(ValueError):
        metrics.accuracy([1, 2], [1])


def test_per_level_partition(rng):
    preds = rng.integers(0, 10, 300)
    labels = rng.integers(0, 10, 300)
    levels = rng.integers(1, 6, 300)
    table = metrics.per_level_accuracy(preds, labels, levels)
    assert sorted(table) == [1, 2, 3, 4, 5]
    weighted = sum(acc * n for acc, n in table.values()) / 300
    assert abs(weighted - metrics.accuracy(preds, labels)) <= 1e-12
