"""Confusion matrices, threshold metrics, ROC curves and AUC.

Positive class is label 1; a sample is predicted positive when its
score is >= the threshold.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import EmptyInput, LengthMismatch, SingleClass, UndefinedMetric

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts, or exact fractions when averaged over folds."""

    tp: float
    tn: float
    fp: float
    fn: float

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> float:
        return self.tp + self.tn + self.fp + self.fn

    def scaled(self, c: float) -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp * c, self.tn * c, self.fp * c, self.fn * c)

    def counts(self) -> list:
        """[tp, tn, fp, fn] as floats, for reports."""
        return [float(self.tp), float(self.tn), float(self.fp), float(self.fn)]


@dataclass(frozen=True, eq=False)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # first entry is +inf (nothing predicted positive)

    @property
    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def to_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            for line in header_comment.splitlines():
                buf.write(f"# {line}\n")
        buf.write("# gnuplot: plot 'this.csv' using 2:3 with lines\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, p in zip(self.thresholds, self.fpr, self.tpr):
            w.writerow([repr(float(t)), repr(float(f)), repr(float(p))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RocCurve":
        rows = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        data = list(csv.DictReader(rows))
        return cls(np.array([float(r["fpr"]) for r in data]),
                   np.array([float(r["tpr"]) for r in data]),
                   np.array([float(r["threshold"]) for r in data]))


def _check(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    if s.shape != y.shape or s.ndim != 1:
        raise LengthMismatch(f"{s.size} scores vs {y.size} labels")
    if s.size == 0:
        raise EmptyInput("no samples")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0 or 1")
    return s, y


def confusion(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> ConfusionMatrix:
    s, y = _check(scores, labels)
    pred = s >= threshold
    pos = y == 1
    return ConfusionMatrix(float(np.sum(pred & pos)), float(np.sum(~pred & ~pos)),
                           float(np.sum(pred & ~pos)), float(np.sum(~pred & pos)))


# Ratios are formed in exact rational arithmetic and rounded once, so they
# depend only on the proportions of the matrix (fold means included).

def _exact(name, num, den) -> Fraction:
    num, den = Fraction(num), Fraction(den)
    if den == 0:
        raise UndefinedMetric(name)
    return num / den


def _ratio(name, num, den) -> float:
    return float(_exact(name, num, den))


def accuracy(cm): return _ratio("accuracy", cm.tp + cm.tn, cm.total)
def sensitivity(cm): return _ratio("sensitivity", cm.tp, cm.tp + cm.fn)
def specificity(cm): return _ratio("specificity", cm.tn, cm.tn + cm.fp)
def precision(cm): return _ratio("precision", cm.tp, cm.tp + cm.fp)


def f1_score(cm):
    pr = _exact("precision", cm.tp, cm.tp + cm.fp)
    se = _exact("sensitivity", cm.tp, cm.tp + cm.fn)
    return float(2 * _exact("f1", pr * se, pr + se))


def summary(cm: ConfusionMatrix) -> dict:
    """ACC, SE, SP, PR and F1; raises UndefinedMetric on a zero denominator."""
    return {"acc": accuracy(cm), "se": sensitivity(cm), "sp": specificity(cm),
            "pr": precision(cm), "f1": f1_score(cm)}


def summary_lenient(cm: ConfusionMatrix) -> dict:
    """Like summary() but undefined entries become NaN."""
    out = {}
    for key, fn in (("acc", accuracy), ("se", sensitivity), ("sp", specificity),
                    ("pr", precision), ("f1", f1_score)):
        try:
            out[key] = fn(cm)
        except UndefinedMetric:
            out[key] = float("nan")
    return out


def roc(scores, labels) -> RocCurve:
    """ROC points from (0, 0) through one point per distinct score, descending."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC needs both classes")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of each tie group
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tps = np.cumsum(y)[ends]
    fps = (ends + 1) - tps
    fpr = np.r_[0.0, fps / n_neg]
    tpr = np.r_[0.0, tps / n_pos]
    return RocCurve(fpr, tpr, np.r_[np.inf, s[ends]])


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the curve."""
    return float(np.sum(np.diff(curve.fpr) * (curve.tpr[1:] + curve.tpr[:-1]) / 2.0))


def roc_auc(scores, labels) -> float:
    return auc(roc(scores, labels))


def mean_folds(cms) -> ConfusionMatrix:
    """Elementwise mean, kept as exact fractions."""
    cms = list(cms)
    if not cms:
        raise EmptyInput("no confusion matrices to average")
    n = len(cms)

    def mean(field):
        return sum((Fraction(getattr(c, field)) for c in cms), Fraction(0)) / n
    return ConfusionMatrix(mean("tp"), mean("tn"), mean("fp"), mean("fn"))
