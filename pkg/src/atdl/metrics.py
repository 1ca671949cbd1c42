"""Confusion counts and the diagnostic summary statistics (PPV, NPV, MCC, F1, ACC).

Undefined statistics (zero denominators) are reported as ``None`` and
rendered as empty cells.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError

METRIC_NAMES = ("ppv", "npv", "mcc", "f1", "acc")


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    matrix: np.ndarray | None = None  # multiclass counts, rows = truth, cols = prediction

    @property
    def binary(self):
        return self.matrix is None

    @property
    def total(self):
        if self.matrix is not None:
            return int(self.matrix.sum())
        return self.tp + self.fp + self.fn + self.tn

    def swapped(self):
        """The same counts with the other class called positive."""
        return Confusion(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp)


def confusion(predictions, truths, positive_label=None, n_labels=None):
    """Binary counts for ``positive_label``, or a full count matrix when it is None."""
    pred = np.asarray(predictions).ravel()
    true = np.asarray(truths).ravel()
    if pred.shape != true.shape:
        raise ArgumentError(f"{pred.size} predictions but {true.size} truths")
    if pred.size == 0:
        raise ArgumentError("confusion needs at least one sample")
    if positive_label is not None:
        p = pred == positive_label
        t = true == positive_label
        return Confusion(tp=int(np.sum(p & t)), fp=int(np.sum(p & ~t)),
                         fn=int(np.sum(~p & t)), tn=int(np.sum(~p & ~t)))
    if n_labels is None:
        n_labels = int(max(pred.max(), true.max())) + 1
    m = np.zeros((n_labels, n_labels), dtype=np.int64)
    np.add.at(m, (true.astype(np.int64), pred.astype(np.int64)), 1)
    return Confusion(matrix=m)


def _ratio(num, den):
    return num / den if den else None


def report(c):
    if not c.binary:
        total = c.total
        return {"ppv": None, "npv": None, "mcc": None, "f1": None,
                "acc": _ratio(float(np.trace(c.matrix)), total)}
    tp, fp, fn, tn = c.tp, c.fp, c.fn, c.tn
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    return {
        "ppv": _ratio(tp, tp + fp),
        "npv": _ratio(tn, tn + fn),
        "mcc": (tp * tn - fp * fn) / math.sqrt(den) if den else None,
        "f1": _ratio(2 * tp, 2 * tp + fp + fn),
        "acc": _ratio(tp + tn, c.total),
    }


def accuracy(predictions, truths):
    pred = np.asarray(predictions).ravel()
    true = np.asarray(truths).ravel()
    if pred.shape != true.shape or pred.size == 0:
        raise ArgumentError("accuracy needs equal-length, nonempty inputs")
    return float(np.mean(pred == true))


def format_metric(value, digits=3):
    return "" if value is None else f"{value:.{digits}f}"
