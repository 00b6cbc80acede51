"""Noise-class evaluation metrics and CSV reporting.

All scores are computed from a confusion over the noise class. The
empty-union conventions (IoU, precision, recall all 1.0 when nothing is
noise anywhere) keep clear-weather frames well-defined.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch
from .scan_io import CLASS_NOISE, LabelMask


@dataclass
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def add(self, other: "Confusion"):
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        self.tn += other.tn

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    def iou(self) -> float:
        union = self.tp + self.fp + self.fn
        return 1.0 if union == 0 else self.tp / union

    def precision(self) -> float:
        d = self.tp + self.fp
        return 1.0 if d == 0 else self.tp / d

    def recall(self) -> float:
        d = self.tp + self.fn
        return 1.0 if d == 0 else self.tp / d


def _labels(x):
    return x.labels if isinstance(x, LabelMask) else np.asarray(x)


def confusion(pred, truth) -> Confusion:
    p, t = _labels(pred), _labels(truth)
    if p.shape != t.shape:
        raise LengthMismatch(f"pred {p.shape} vs truth {t.shape}")
    pn = p == CLASS_NOISE
    tn_ = t == CLASS_NOISE
    return Confusion(tp=int(np.sum(pn & tn_)),
                     fp=int(np.sum(pn & ~tn_)),
                     fn=int(np.sum(~pn & tn_)),
                     tn=int(np.sum(~pn & ~tn_)))


def iou_noise(pred, truth) -> float:
    return confusion(pred, truth).iou()


def precision_recall(pred, truth):
    c = confusion(pred, truth)
    return c.precision(), c.recall()


REPORT_FIELDS = ["sequence", "frame", "condition", "iou", "precision",
                 "recall"]


def write_report(path, rows, summary_rows=()):
    """Write per-frame metric rows plus aggregate rows. Floats are
    formatted with repr so identical runs produce identical bytes."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(REPORT_FIELDS)
        for row in rows:
            w.writerow(_format_row(row))
        for row in summary_rows:
            w.writerow(_format_row(row))


def _format_row(row):
    out = []
    for v in row:
        if isinstance(v, float):
            out.append(repr(v))
        else:
            out.append(v)
    return out
