"""Accuracy, per-class recall/precision and confusion matrices."""
from dataclasses import dataclass

import numpy as np

from .data import CLASS_NAMES


def confusion_matrix(y_true, y_pred, n_classes=2):
    """Rows are true classes, columns predicted classes."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


@dataclass
class Metrics:
    accuracy: float
    recall: list
    precision: list
    confusion: list
    n: int

    @classmethod
    def from_confusion(cls, cm):
        cm = np.asarray(cm, dtype=np.int64)
        n = int(cm.sum())
        diag = np.diag(cm).astype(float)
        rows = cm.sum(axis=1)
        cols = cm.sum(axis=0)
        recall = [float(d / r) if r else 0.0 for d, r in zip(diag, rows)]
        precision = [float(d / c) if c else 0.0 for d, c in zip(diag, cols)]
        acc = float(diag.sum() / n) if n else 0.0
        return cls(acc, recall, precision, cm.tolist(), n)

    @classmethod
    def from_predictions(cls, y_true, y_pred):
        return cls.from_confusion(confusion_matrix(y_true, y_pred))

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "recall": dict(zip(CLASS_NAMES, self.recall)),
            "precision": dict(zip(CLASS_NAMES, self.precision)),
            "confusion": self.confusion,
            "n": self.n,
        }


def metrics_from_counts(cm):
    return Metrics.from_confusion(cm)


def mean_over_splits(values):
    """Arithmetic mean and population standard deviation of per-split values."""
    v = np.asarray(values, dtype=np.float64)
    if v.shape[0] < 2:
        raise ValueError("need at least two runs to summarise")
    mean = v.mean(axis=0)
    return mean, np.sqrt(((v - mean) ** 2).mean(axis=0))
