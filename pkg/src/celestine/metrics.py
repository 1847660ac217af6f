"""Binary classification metrics with galaxy (label 0) as the positive class."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion matrix counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def transposed(self) -> "ConfusionMatrix":
        """Same counts seen with the other class as positive."""
        return ConfusionMatrix(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp)

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


def confusion_matrix(predictions, labels) -> ConfusionMatrix:
    pred = np.asarray(predictions)
    true = np.asarray(labels)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ValueError(f"predictions {pred.shape} and labels {true.shape} must be equal-length 1-D")
    for name, arr in (("predictions", pred), ("labels", true)):
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} must contain only 0 (galaxy) and 1 (nsc)")
    pos_pred, pos_true = pred == 0, true == 0
    return ConfusionMatrix(
        tp=int(np.sum(pos_pred & pos_true)),
        fp=int(np.sum(pos_pred & ~pos_true)),
        fn=int(np.sum(~pos_pred & pos_true)),
        tn=int(np.sum(~pos_pred & ~pos_true)),
    )


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ValueError("accuracy of an empty confusion matrix is undefined")
    return (cm.tp + cm.tn) / cm.total


@dataclass
class PRF:
    precision: float
    recall: float
    f1: float
    flags: list[str] = field(default_factory=list)


def precision_recall_f1(cm: ConfusionMatrix, label: str = "galaxy") -> PRF:
    """Precision, recall and F1; undefined values are NaN and named in ``flags``."""
    flags = []
    if cm.tp + cm.fp:
        precision = cm.tp / (cm.tp + cm.fp)
    else:
        precision = math.nan
        flags.append(f"precision_{label}_undefined")
    if cm.tp + cm.fn:
        recall = cm.tp / (cm.tp + cm.fn)
    else:
        recall = math.nan
        flags.append(f"recall_{label}_undefined")
    if math.isnan(precision) or math.isnan(recall) or precision + recall == 0:
        f1 = math.nan
        flags.append(f"f1_{label}_undefined")
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return PRF(precision, recall, f1, flags)


def per_class_f1(cm: ConfusionMatrix) -> tuple[PRF, PRF]:
    return precision_recall_f1(cm, "galaxy"), precision_recall_f1(cm.transposed(), "nsc")


@dataclass
class MetricsReport:
    confusion: ConfusionMatrix
    accuracy: float
    galaxy: PRF
    nsc: PRF

    @property
    def f1_galaxy(self) -> float:
        return self.galaxy.f1

    @property
    def f1_nsc(self) -> float:
        return self.nsc.f1

    @property
    def flags(self) -> list[str]:
        return self.galaxy.flags + self.nsc.flags

    def as_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v

        return {
            "accuracy": clean(self.accuracy),
            "f1_galaxy": clean(self.f1_galaxy),
            "f1_nsc": clean(self.f1_nsc),
            "confusion_matrix": self.confusion.as_dict(),
            "flags": self.flags,
        }

    def to_json(self, **extra) -> str:
        return json.dumps({**self.as_dict(), **extra}, indent=2)


def metrics_report(cm: ConfusionMatrix) -> MetricsReport:
    galaxy, nsc = per_class_f1(cm)
    return MetricsReport(cm, accuracy(cm), galaxy, nsc)
