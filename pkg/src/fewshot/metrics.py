"""Confusion matrices and accuracy / precision / recall / F1 reports.

Per-class metrics use the one-vs-rest counts; macro values are unweighted
class means.  Degenerate 0/0 cases resolve to 0 (a class never predicted
has precision 0; a class with no true samples has recall 0; F1 is 0 when
precision + recall is 0).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = ["ConfusionMatrix", "MetricsReport", "confusion", "report"]


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[i, j] = samples of true class_order[i] predicted as class_order[j]."""

    class_order: tuple[int, ...]
    counts: np.ndarray

    def __post_init__(self):
        c = len(self.class_order)
        if self.counts.shape != (c, c):
            raise ValueError(f"counts shape {self.counts.shape} != ({c}, {c})")
        if (self.counts < 0).any():
            raise ValueError("negative counts")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def normalized(self) -> np.ndarray:
        """Row-normalized counts; rows without support stay all-zero."""
        sums = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        out = np.divide(self.counts, sums, where=sums > 0,
                        out=np.zeros_like(self.counts, dtype=np.float64))
        return out


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: dict[int, float]
    recall: dict[int, float]
    f1: dict[int, float]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: ConfusionMatrix

    def to_dict(self) -> dict:
        key = lambda c: str(c)
        return {
            "accuracy": self.accuracy,
            "precision": {key(c): v for c, v in self.precision.items()},
            "recall": {key(c): v for c, v in self.recall.items()},
            "f1": {key(c): v for c, v in self.f1.items()},
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "class_order": list(self.confusion.class_order),
            "confusion": self.confusion.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        order = tuple(int(c) for c in d["class_order"])
        cm = ConfusionMatrix(order, np.asarray(d["confusion"], dtype=np.int64))
        as_int = lambda m: {int(k): float(v) for k, v in m.items()}
        return cls(
            accuracy=float(d["accuracy"]),
            precision=as_int(d["precision"]),
            recall=as_int(d["recall"]),
            f1=as_int(d["f1"]),
            macro_precision=float(d["macro_precision"]),
            macro_recall=float(d["macro_recall"]),
            macro_f1=float(d["macro_f1"]),
            confusion=cm,
        )


def confusion(true_labels: Sequence[int], predicted_labels: Sequence[int],
              class_order: Sequence[int]) -> ConfusionMatrix:
    if len(true_labels) != len(predicted_labels):
        raise ValueError(f"{len(true_labels)} true labels vs "
                         f"{len(predicted_labels)} predictions")
    if len(true_labels) == 0:
        raise ValueError("no samples")
    order = tuple(int(c) for c in class_order)
    pos = {c: i for i, c in enumerate(order)}
    counts = np.zeros((len(order), len(order)), dtype=np.int64)
    for t, p in zip(true_labels, predicted_labels):
        if t not in pos or p not in pos:
            raise ValueError(f"label pair ({t}, {p}) outside class order {order}")
        counts[pos[t], pos[p]] += 1
    return ConfusionMatrix(class_order=order, counts=counts)


def report(cm: ConfusionMatrix) -> MetricsReport:
    """Accuracy plus per-class and macro precision/recall/F1 from the matrix."""
    if cm.total < 1:
        raise ValueError("empty confusion matrix")
    tp = np.diag(cm.counts).astype(np.float64)
    fp = cm.counts.sum(axis=0) - tp
    fn = cm.counts.sum(axis=1) - tp

    def safe_div(num, den):
        return float(num / den) if den > 0 else 0.0

    precision, recall, f1 = {}, {}, {}
    for i, c in enumerate(cm.class_order):
        p = safe_div(tp[i], tp[i] + fp[i])
        r = safe_div(tp[i], tp[i] + fn[i])
        precision[c] = p
        recall[c] = r
        f1[c] = safe_div(2 * p * r, p + r)
    n = len(cm.class_order)
    return MetricsReport(
        accuracy=float(tp.sum()) / cm.total,
        precision=precision,
        recall=recall,
        f1=f1,
        macro_precision=sum(precision.values()) / n,
        macro_recall=sum(recall.values()) / n,
        macro_f1=sum(f1.values()) / n,
        confusion=cm,
    )
