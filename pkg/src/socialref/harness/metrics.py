"""Classification metrics and the append-only metrics CSV."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from socialref.errors import DataError

COLUMNS = ("epoch", "train_loss", "accuracy", "macro_precision", "macro_recall",
           "accuracy_no_everyone", "n_eval", "n_unknown", "confusion")


def confusion_matrix(targets, predictions, classes):
    m = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(m, (np.asarray(targets, dtype=np.int64), np.asarray(predictions, dtype=np.int64)), 1)
    return m


def macro_scores(confusion):
    """Macro precision and recall over classes with nonzero support."""
    c = np.asarray(confusion, dtype=np.float64)
    support = c.sum(axis=1)
    predicted = c.sum(axis=0)
    tp = np.diag(c)
    keep = support > 0
    if not keep.any():
        return math.nan, math.nan
    recall = tp[keep] / support[keep]
    precision = np.divide(tp[keep], predicted[keep], out=np.zeros(int(keep.sum())), where=predicted[keep] > 0)
    return float(precision.mean()), float(recall.mean())


@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float
    confusion: np.ndarray
    accuracy_no_everyone: float = math.nan
    n_unknown: int = 0
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def n_eval(self):
        return int(self.confusion.sum())

    @property
    def accuracy(self):
        n = self.confusion.sum()
        return float(np.trace(self.confusion) / n) if n else math.nan

    @property
    def macro(self):
        return macro_scores(self.confusion)

    @classmethod
    def from_predictions(cls, epoch, train_loss, targets, predictions, classes, everyone=None, n_unknown=0):
        conf = confusion_matrix(targets, predictions, classes)
        acc_ne = math.nan
        if everyone is not None:
            keep = np.asarray(targets) != everyone
            if keep.any():
                acc_ne = float(np.mean(np.asarray(predictions)[keep] == np.asarray(targets)[keep]))
        return cls(epoch, train_loss, conf, acc_ne, n_unknown)

    def row(self):
        p, r = self.macro
        return {
            "epoch": str(self.epoch),
            "train_loss": _fmt(self.train_loss),
            "accuracy": _fmt(self.accuracy),
            "macro_precision": _fmt(p),
            "macro_recall": _fmt(r),
            "accuracy_no_everyone": _fmt(self.accuracy_no_everyone),
            "n_eval": str(self.n_eval),
            "n_unknown": str(self.n_unknown),
            "confusion": ";".join(" ".join(str(int(x)) for x in r_) for r_ in self.confusion),
        }


def _fmt(x):
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.6f}"


class MetricsWriter:
    """Single writer; rows are appended and flushed, never rewritten."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if self.path.exists() and self.path.stat().st_size:
            with self.path.open(newline="") as fh:
                header = next(csv.reader(fh), None)
            if tuple(header or ()) != COLUMNS:
                raise DataError(f"{self.path}: existing metrics file has a different schema")
        else:
            with self.path.open("w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(COLUMNS)

    def append(self, record: MetricsRecord):
        with self.path.open("a", newline="") as fh:
            csv.DictWriter(fh, COLUMNS, lineterminator="\n").writerow(record.row())


def read_metrics(path):
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read metrics {path}: {exc}") from exc
    out = []
    for r in rows:
        conf = np.array([[int(x) for x in line.split()] for line in r["confusion"].split(";")])
        rec = MetricsRecord(int(r["epoch"]), float(r["train_loss"]) if r["train_loss"] else math.nan, conf,
                            float(r["accuracy_no_everyone"]) if r["accuracy_no_everyone"] else math.nan,
                            int(r["n_unknown"]))
        out.append(rec)
    return out
