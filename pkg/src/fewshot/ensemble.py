"""Hard- and soft-voting aggregation of per-model query predictions.

Hard voting picks the label most models predicted; ties fall back to a
soft vote restricted to the tied labels, then to the lowest class index.
Soft voting averages the probability vectors and takes the argmax.
Aggregation always runs at float64 regardless of training precision.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "PredictionMatrix",
    "EnsembleDecision",
    "AlignmentError",
    "hard_vote",
    "soft_vote",
    "decide",
    "ensemble_evaluate",
]

_SUM_TOL = 1e-6


class AlignmentError(ValueError):
    """Prediction matrices do not describe the same queries."""


@dataclass
class PredictionMatrix:
    """Per-model class probabilities for a shared batch of queries.

    ``probs[m, q]`` is model m's probability vector over query q's episode
    class order (global class ids in ``query_class_orders[q]``).
    """

    model_ids: list[str]
    classes: list[int]                         # global class universe
    true_labels: list[int]                     # per query, global class id
    query_class_orders: list[tuple[int, ...]]  # per query episode class order
    probs: np.ndarray                          # [k, Q, n_way], float64

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        k, q, _ = self.probs.shape
        if len(self.model_ids) != k:
            raise ValueError(f"{len(self.model_ids)} model ids for {k} prob layers")
        if len(self.true_labels) != q or len(self.query_class_orders) != q:
            raise ValueError("queries, labels and class orders must align")
        sums = self.probs.sum(axis=2)
        if np.abs(sums - 1.0).max() > _SUM_TOL:
            raise ValueError("probability vectors must sum to 1")

    @property
    def n_models(self) -> int:
        return self.probs.shape[0]

    @property
    def n_queries(self) -> int:
        return self.probs.shape[1]

    def hard_labels(self) -> np.ndarray:
        """[k, Q] argmax label indices (positions in each query's class order)."""
        return self.probs.argmax(axis=2)

    @classmethod
    def merge(cls, matrices: Sequence["PredictionMatrix"]) -> "PredictionMatrix":
        """Stack per-model matrices evaluated on identical episode streams."""
        if not matrices:
            raise ValueError("no prediction matrices")
        first = matrices[0]
        for m in matrices[1:]:
            if m.n_queries != first.n_queries:
                raise AlignmentError(f"query count mismatch: {m.n_queries} vs "
                                     f"{first.n_queries}")
            if m.query_class_orders != first.query_class_orders:
                raise AlignmentError("query class orders differ between models")
            if m.true_labels != first.true_labels:
                raise AlignmentError("true labels differ between models")
            if m.classes != first.classes:
                raise AlignmentError("class universes differ between models")
        ids = [mid for m in matrices for mid in m.model_ids]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate model ids: {ids}")
        return cls(
            model_ids=ids,
            classes=list(first.classes),
            true_labels=list(first.true_labels),
            query_class_orders=list(first.query_class_orders),
            probs=np.concatenate([m.probs for m in matrices], axis=0),
        )

    def to_dict(self) -> dict:
        return {
            "model_ids": list(self.model_ids),
            "classes": list(self.classes),
            "true_labels": list(self.true_labels),
            "query_class_orders": [list(o) for o in self.query_class_orders],
            "probs": self.probs.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PredictionMatrix":
        return cls(
            model_ids=[str(m) for m in d["model_ids"]],
            classes=[int(c) for c in d["classes"]],
            true_labels=[int(t) for t in d["true_labels"]],
            query_class_orders=[tuple(int(c) for c in o)
                                for o in d["query_class_orders"]],
            probs=np.asarray(d["probs"], dtype=np.float64),
        )


@dataclass(frozen=True)
class EnsembleDecision:
    hv_label: int            # position in the query's class order
    sv_label: int
    p_mean: np.ndarray
    tie: bool


def hard_vote(labels: Sequence[int], prob_vectors: np.ndarray | None = None
              ) -> tuple[int, bool]:
    """Most frequent label; ties resolved by a soft vote over the tied labels.

    Without probability vectors a tie falls back to the lowest label index.
    Returns (label, tie_flag).
    """
    if len(labels) == 0:
        raise ValueError("no model votes")
    counts = Counter(int(l) for l in labels)
    top = max(counts.values())
    tied = sorted(label for label, c in counts.items() if c == top)
    if len(tied) == 1:
        return tied[0], False
    if prob_vectors is None:
        return tied[0], True
    mean = np.asarray(prob_vectors, dtype=np.float64).mean(axis=0)
    best = tied[int(np.argmax(mean[tied]))]
    return best, True


def soft_vote(prob_vectors: np.ndarray) -> tuple[int, np.ndarray]:
    """Mean probability vector and its argmax (lowest index on exact ties)."""
    vectors = np.asarray(prob_vectors, dtype=np.float64)
    if vectors.ndim != 2:
        raise ValueError(f"expected [k, n_way] probabilities, got {vectors.shape}")
    mean = vectors.mean(axis=0)
    return int(np.argmax(mean)), mean


def decide(prob_vectors: np.ndarray) -> EnsembleDecision:
    """Both voting rules for one query's [k, n_way] probability block."""
    vectors = np.asarray(prob_vectors, dtype=np.float64)
    labels = vectors.argmax(axis=1)
    hv, tie = hard_vote(labels, vectors)
    sv, mean = soft_vote(vectors)
    return EnsembleDecision(hv_label=hv, sv_label=sv, p_mean=mean, tie=tie)


def ensemble_evaluate(matrix: PredictionMatrix) -> dict:
    """Aggregate a k-model prediction matrix into HV and SV metric reports."""
    from . import metrics as metrics_mod

    decisions = [decide(matrix.probs[:, q, :]) for q in range(matrix.n_queries)]
    hv_pred = [matrix.query_class_orders[q][d.hv_label] for q, d in enumerate(decisions)]
    sv_pred = [matrix.query_class_orders[q][d.sv_label] for q, d in enumerate(decisions)]
    hv_cm = metrics_mod.confusion(matrix.true_labels, hv_pred, matrix.classes)
    sv_cm = metrics_mod.confusion(matrix.true_labels, sv_pred, matrix.classes)
    return {
        "hard_voting": metrics_mod.report(hv_cm),
        "soft_voting": metrics_mod.report(sv_cm),
        "decisions": decisions,
        "n_ties": sum(d.tie for d in decisions),
    }
