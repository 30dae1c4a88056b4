"""Classification metrics: confusion counts plus weighted/unweighted accuracy.

Weighted accuracy (WA) is the overall fraction of correct predictions;
unweighted accuracy (UA) is the macro average of per-class recalls, skipping
classes with no samples. Both are derived from the integer confusion matrix,
so duplicating a dataset k times changes neither: every ratio's numerator and
denominator scale together and the true quotients are unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError


@dataclass(frozen=True)
class EvalResult:
    """Accuracy pair plus the confusion matrix the pair is derived from."""

    wa: float
    ua: float
    confusion: np.ndarray  # [C, C] int64; rows true class, columns predicted

    def __str__(self) -> str:
        return f"WA {self.wa:.4f}  UA {self.ua:.4f}  n {int(self.confusion.sum())}"


def confusion_matrix(labels, predictions, n_classes: int) -> np.ndarray:
    """Count matrix with true classes on rows and predictions on columns."""
    lab = np.asarray(labels, dtype=np.int64).reshape(-1)
    pred = np.asarray(predictions, dtype=np.int64).reshape(-1)
    if lab.shape != pred.shape:
        raise ContractError(
            f"labels and predictions differ in length: {lab.shape[0]} vs {pred.shape[0]}")
    if n_classes < 1:
        raise ContractError(f"n_classes must be positive, got {n_classes}")
    if lab.size == 0:
        raise DataError("cannot evaluate an empty sample set")
    for name, arr in (("labels", lab), ("predictions", pred)):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ContractError(
                f"{name} out of range [0, {n_classes}): [{arr.min()}, {arr.max()}]")
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (lab, pred), 1)
    return conf


def weighted_accuracy(confusion: np.ndarray) -> float:
    total = int(confusion.sum())
    if total == 0:
        raise DataError("confusion matrix has no samples")
    return float(np.trace(confusion)) / total


def unweighted_accuracy(confusion: np.ndarray) -> float:
    support = confusion.sum(axis=1)
    if int(support.sum()) == 0:
        raise DataError("confusion matrix has no samples")
    present = support > 0
    recalls = np.diag(confusion)[present] / support[present]
    return float(recalls.mean())


def evaluate_predictions(labels, predictions, n_classes: int) -> EvalResult:
    conf = confusion_matrix(labels, predictions, n_classes)
    return EvalResult(wa=weighted_accuracy(conf), ua=unweighted_accuracy(conf),
                      confusion=conf)
