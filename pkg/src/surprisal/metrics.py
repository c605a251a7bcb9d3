"""Evaluation statistics for quality predictors and classifiers."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize, special, stats

SIGNIFICANCE_Z = 1.96


def _degenerate(a, b):
    """Totalized value for zero-variance inputs, or ``None`` when both vary."""
    a_const = np.all(a == a[0])
    b_const = np.all(b == b[0])
    if np.array_equal(a, b):
        return 1.0
    if a_const or b_const:
        return 0.0
    return None


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("need at least two samples")
    return a, b


def _pearson(a, b):
    da = a - a.mean()
    db = b - b.mean()
    r = float(da @ db / math.sqrt(float(da @ da) * float(db @ db)))
    return min(1.0, max(-1.0, r))


def plcc(a, b):
    a, b = _pair(a, b)
    fixed = _degenerate(a, b)
    return fixed if fixed is not None else _pearson(a, b)


def srcc(a, b):
    """Spearman correlation: Pearson of average-ranked data.

    Identical inputs give exactly 1; a constant input gives 0.
    """
    a, b = _pair(a, b)
    fixed = _degenerate(a, b)
    if fixed is not None:
        return fixed
    return _pearson(stats.rankdata(a), stats.rankdata(b))


def krcc(a, b):
    """Kendall tau-b with tie correction."""
    a, b = _pair(a, b)
    fixed = _degenerate(a, b)
    if fixed is not None:
        return fixed
    return float(stats.kendalltau(a, b, variant="b").statistic)


# -- nonlinear mapping -------------------------------------------------------


def logistic4(s, b1, b2, b3, b4):
    return (b1 - b2) * special.expit((s - b3) / max(abs(b4), 1e-300)) + b2


@dataclass(frozen=True)
class MappingFit:
    mapped: np.ndarray
    params: tuple  # logistic (b1, b2, b3, b4) in the original prediction scale
    kind: str  # "logistic" or "affine"
    rmse: float
    converged: bool


def _affine(pred, mos):
    design = np.column_stack([pred, np.ones_like(pred)])
    coef, *_ = np.linalg.lstsq(design, mos, rcond=None)
    return design @ coef, coef


def logistic_fit(pred, mos, max_iter=2000):
    """Fit a 4-parameter logistic from predictions to subjective scores.

    Nelder-Mead on squared error, run on standardized predictions so the fit
    does not depend on the prediction scale. If the logistic does not beat
    the best affine map, or the simplex fails to converge, the affine map is
    returned instead (``kind == "affine"``).
    """
    pred, mos = _pair(pred, mos)
    if pred.size < 8:
        raise ValueError("logistic_fit needs at least 8 samples")
    mu = pred.mean()
    sd = pred.std() or 1.0
    s = (pred - mu) / sd

    def sse(p):
        r = logistic4(s, *p) - mos
        return float(r @ r)

    x0 = np.array([mos.max(), mos.min(), 0.0, 1.0])
    if srcc(pred, mos) < 0:
        x0[:2] = x0[1::-1]
    scale = float(np.sum((mos - mos.mean()) ** 2)) or 1.0
    opts = {"maxiter": max_iter, "maxfev": 2 * max_iter, "xatol": 1e-10, "fatol": 1e-14 * scale}
    res = optimize.minimize(sse, x0, method="Nelder-Mead", options=opts)
    converged = bool(res.success)
    if converged:
        # one restart from the optimum tightens a collapsed simplex
        res = optimize.minimize(sse, res.x, method="Nelder-Mead", options=opts)
        converged = bool(res.success)

    affine_mapped, _ = _affine(pred, mos)
    affine_rmse = float(np.sqrt(np.mean((affine_mapped - mos) ** 2)))
    mapped = logistic4(s, *res.x)
    rmse = float(np.sqrt(np.mean((mapped - mos) ** 2)))
    b1, b2, b3, b4 = res.x
    params = (float(b1), float(b2), float(mu + b3 * sd), float(abs(b4) * sd))
    if not converged:
        warnings.warn("logistic fit did not converge; using affine map", RuntimeWarning, stacklevel=2)
    if not converged or rmse > affine_rmse:
        return MappingFit(affine_mapped, params, "affine", affine_rmse, converged)
    return MappingFit(mapped, params, "logistic", rmse, converged)


def rmse(a, b):
    a, b = _pair(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def outlier_ratio(residuals, mos_std=None):
    """Fraction of residuals beyond twice the per-item (or global) spread.

    Without ``mos_std`` the threshold is twice the population standard
    deviation of the residuals themselves.
    """
    r = np.abs(np.asarray(residuals, dtype=np.float64).ravel())
    if r.size == 0:
        raise ValueError("no residuals")
    if mos_std is None:
        thresh = 2.0 * np.asarray(residuals, dtype=np.float64).std()
    else:
        thresh = 2.0 * np.asarray(mos_std, dtype=np.float64).ravel()
        if thresh.shape != r.shape:
            raise ValueError("mos_std length differs from residuals")
    return float(np.mean(r > thresh))


def fisher_z_statistic(r1, r2, n1, n2):
    if n1 <= 3 or n2 <= 3:
        raise ValueError("significance needs more than 3 samples per method")
    if abs(r1) >= 1 or abs(r2) >= 1:
        raise ValueError("correlations must lie strictly inside (-1, 1)")
    return (math.atanh(r1) - math.atanh(r2)) / math.sqrt(1.0 / (n1 - 3) + 1.0 / (n2 - 3))


def significance(r1, r2, n1, n2):
    """Compare correlation ``r1`` of a method against ``r2`` of a reference.

    Returns 0 when the difference is not significant at the 95% level, 1 when
    method 1 is significantly better and -1 when it is significantly worse.
    """
    stat = fisher_z_statistic(r1, r2, n1, n2)
    if abs(stat) < SIGNIFICANCE_Z:
        return 0
    return 1 if stat > 0 else -1


@dataclass(frozen=True)
class MetricReport:
    or_: float
    rmse: float
    plcc: float
    srcc: float
    krcc: float
    n: int
    logistic_params: tuple
    mapping: str

    def as_row(self):
        row = asdict(self)
        row["logistic_params"] = " ".join(f"{p:.10g}" for p in self.logistic_params)
        return row


def evaluate(pred, mos, mos_std=None):
    """Full report: SRCC/KRCC on raw scores, PLCC/RMSE/OR after the logistic map."""
    pred, mos = _pair(pred, mos)
    if pred.size < 4:
        raise ValueError("need at least 4 samples for a metric report")
    if pred.size >= 8:
        fit = logistic_fit(pred, mos)
        mapped, params, kind = fit.mapped, fit.params, fit.kind
    else:
        mapped, _ = _affine(pred, mos)
        params, kind = (math.nan,) * 4, "affine"
    return MetricReport(
        or_=outlier_ratio(mapped - mos, mos_std),
        rmse=rmse(mapped, mos),
        plcc=plcc(mapped, mos),
        srcc=srcc(pred, mos),
        krcc=krcc(pred, mos),
        n=int(pred.size),
        logistic_params=tuple(float(p) for p in params),
        mapping=kind,
    )


# -- classification ----------------------------------------------------------


def accuracy(preds, labels):
    preds = np.asarray(preds).ravel()
    labels = np.asarray(labels).ravel()
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: {preds.size} predictions, {labels.size} labels")
    if preds.size == 0:
        raise ValueError("no predictions")
    return float(np.mean(preds == labels))


def per_level_accuracy(preds, labels, levels):
    """``{level: (accuracy, count)}`` for each distinct level, in sorted order."""
    preds = np.asarray(preds).ravel()
    labels = np.asarray(labels).ravel()
    levels = np.asarray(levels).ravel()
    if not (preds.shape == labels.shape == levels.shape):
        raise ValueError("preds, labels and levels must have equal lengths")
    out = {}
    for lv in np.unique(levels):
        sel = levels == lv
        out[lv.item()] = (accuracy(preds[sel], labels[sel]), int(sel.sum()))
    return out
