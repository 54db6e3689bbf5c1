"""ROC-AUC, confusion matrices and one-sided t-tests."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class RocResult:
    auc: float
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray

    @property
    def operating_points(self) -> list:
        return list(zip(self.thresholds.tolist(), self.tpr.tolist(), self.fpr.tolist()))


def roc_auc(scores, labels) -> RocResult:
    """Sweep the distinct scores from high to low and integrate the ROC curve.

    Tied scores move TPR and FPR together, which credits each tied
    positive/negative pair with one half. The trapezoid area is kept in
    integer counts and divided once, so the value equals the Mann-Whitney
    statistic exactly.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError("scores and labels must be 1-d arrays of equal length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC-AUC needs both classes present")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    p = pos[order].astype(np.int64)
    last_of_run = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(p)[last_of_run]
    fp = (last_of_run + 1) - tp
    tp = np.r_[0, tp]
    fp = np.r_[0, fp]
    twice_area = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    auc = twice_area / (2 * n_pos * n_neg)
    thresholds = np.r_[np.inf, s[last_of_run]]
    return RocResult(auc, thresholds, tp / n_pos, fp / n_neg)


class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class."""

    def __init__(self, n_classes: int, counts=None):
        self.n_classes = n_classes
        self.counts = (np.zeros((n_classes, n_classes), dtype=np.int64) if counts is None
                       else np.array(counts, dtype=np.int64))
        if self.counts.shape != (n_classes, n_classes):
            raise MetricError(f"counts must be {n_classes}x{n_classes}")

    def update(self, preds, labels) -> ConfusionMatrix:
        preds = np.asarray(preds, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64)
        if preds.shape != labels.shape:
            raise MetricError("preds and labels differ in length")
        for name, arr in (("prediction", preds), ("label", labels)):
            bad = (arr < 0) | (arr >= self.n_classes)
            if bad.any():
                raise MetricError(f"invalid {name} class index {int(arr[bad][0])}")
        np.add.at(self.counts, (labels, preds), 1)
        return self

    def __add__(self, other: ConfusionMatrix) -> ConfusionMatrix:
        if other.n_classes != self.n_classes:
            raise MetricError("cannot add confusion matrices of different sizes")
        return ConfusionMatrix(self.n_classes, self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def normalized(self):
        """Row-normalized matrix and the indices of empty rows (left all zero)."""
        return normalize(self.counts)

    def tolist(self):
        return self.counts.tolist()


def normalize(counts):
    counts = np.asarray(counts, dtype=np.float64)
    sums = counts.sum(axis=1, keepdims=True)
    empty = np.flatnonzero(sums[:, 0] == 0).tolist()
    out = np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)
    return out, empty


def confusion_update(matrix: ConfusionMatrix, preds, labels) -> ConfusionMatrix:
    return matrix.update(preds, labels)


def accumulate(matrices) -> ConfusionMatrix:
    matrices = list(matrices)
    if not matrices:
        raise MetricError("nothing to accumulate")
    total = ConfusionMatrix(matrices[0].n_classes)
    for m in matrices:
        total = total + m
    return total


# --- Student t ----------------------------------------------------------------

def _betacf(a, b, x, max_iter=500, eps=1e-16):
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf(t: float, df: float) -> float:
    """P(T > t) for Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    t2 = t * t
    if t2 < df:
        # near zero df/(df+t^2) rounds to 1; the complementary argument keeps precision
        tail = 0.5 - 0.5 * betainc(0.5, df / 2.0, t2 / (df + t2))
    else:
        tail = 0.5 * betainc(df / 2.0, 0.5, df / (df + t2))
    return tail if t >= 0 else 1.0 - tail


def t_cdf(t: float, df: float) -> float:
    return 1.0 - t_sf(t, df) if t >= 0 else t_sf(-t, df)


@dataclass(frozen=True)
class TTestResult:
    statistic: float
    df: int
    pvalue: float
    alternative: str
    mean: float
    mu0: float

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "df": self.df, "pvalue": self.pvalue,
                "alternative": self.alternative, "mean": self.mean, "mu0": self.mu0}


def one_sample_t_test(values, mu0: float = 0.0, alternative: str = "greater") -> TTestResult:
    """One-sided test of mean(values) against ``mu0``; alternative 'greater' or 'less'."""
    if alternative not in ("greater", "less"):
        raise MetricError("alternative must be 'greater' or 'less'")
    x = np.asarray(values, dtype=np.float64)
    n = len(x)
    if n < 2:
        raise MetricError("t-test needs at least two values")
    sd = float(np.std(x, ddof=1))
    # identical values can leave a rounding-level std behind
    if sd == 0.0 or np.all(x == x[0]):
        raise MetricError("t-test undefined for zero sample variance")
    mean = float(np.mean(x))
    t = (mean - mu0) / (sd / math.sqrt(n))
    p = t_sf(t, n - 1) if alternative == "greater" else t_cdf(t, n - 1)
    return TTestResult(t, n - 1, p, alternative, mean, mu0)


def paired_t_test(a, b, alternative: str = "greater") -> TTestResult:
    """One-sided test on the paired differences ``a - b`` against 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"paired samples differ in length ({len(a)} vs {len(b)})")
    return one_sample_t_test(a - b, 0.0, alternative)
