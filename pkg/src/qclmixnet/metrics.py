"""Confusion matrix and macro-averaged classification metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Metrics:
    accuracy: float
    maP: float
    maR: float
    maF1: float
    zero_division: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"accuracy": self.accuracy, "maP": self.maP, "maR": self.maR, "maF1": self.maF1}


METRIC_NAMES = ("accuracy", "maP", "maR", "maF1")


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    """``C x C`` counts indexed (true, predicted)."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred differ in length")
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} has labels outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def macro_metrics(cm: np.ndarray) -> Metrics:
    """Accuracy, macro precision/recall and their harmonic mean.

    maF1 is ``2 maP maR / (maP + maR)``, not the mean of per-class F1.
    Precision or recall of a class with an empty denominator counts as 0 and
    the class is listed in ``zero_division``.
    """
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total <= 0:
        raise ValueError("empty confusion matrix")
    tp = np.diag(cm)
    pred_count = cm.sum(axis=0)
    true_count = cm.sum(axis=1)
    flags = [f"precision:{i}" for i in np.flatnonzero(pred_count == 0)]
    flags += [f"recall:{i}" for i in np.flatnonzero(true_count == 0)]
    precision = np.divide(tp, pred_count, out=np.zeros_like(tp), where=pred_count > 0)
    recall = np.divide(tp, true_count, out=np.zeros_like(tp), where=true_count > 0)
    map_, mar = float(precision.mean()), float(recall.mean())
    maf1 = 0.0 if map_ + mar == 0 else 2.0 * map_ * mar / (map_ + mar)
    return Metrics(float(tp.sum() / total), map_, mar, maf1, flags)


def classification_metrics(y_true, y_pred, num_classes: int) -> Metrics:
    return macro_metrics(confusion_matrix(y_true, y_pred, num_classes))


def mean_per_class_f1(cm: np.ndarray) -> float:
    """The more common macro-F1 (mean of per-class F1), for comparison only."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    denom = cm.sum(axis=0) + cm.sum(axis=1)
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(f1.mean())
