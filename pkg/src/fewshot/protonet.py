"""Prototype computation, distances, class probabilities, cross-entropy.

Prototypes are per-class means of support embeddings.  Queries are scored
by squared Euclidean distance to each prototype; probabilities come from a
softmax over negative distances.  The per-dimension summation used for the
prototype mean is order-fixed (sorted), so permuting the support samples of
a class reproduces the prototype bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "PrototypeSet",
    "QueryPrediction",
    "compute_prototypes",
    "sq_euclidean",
    "classify",
    "ce_loss",
    "LOG_FLOOR",
]

# Probabilities are clamped here before the log so a certain-wrong
# prediction yields a large finite loss instead of -log(0).
LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class PrototypeSet:
    """Row i of ``matrix`` is the prototype of ``class_order[i]``."""

    class_order: tuple[int, ...]
    matrix: np.ndarray

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[0] != len(self.class_order):
            raise ValueError(f"prototype matrix shape {self.matrix.shape} does not "
                             f"match {len(self.class_order)} classes")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("non-finite prototype entries")


@dataclass(frozen=True)
class QueryPrediction:
    """Per-query class probabilities and distances, aligned to a class order."""

    probabilities: np.ndarray
    distances: np.ndarray

    def __post_init__(self):
        p = self.probabilities
        tol = 1e-6 if p.dtype == np.float32 else 1e-12
        if p.min() < -tol or p.max() > 1 + tol:
            raise ValueError("probabilities outside [0, 1]")
        if abs(float(p.sum()) - 1.0) > tol:
            raise ValueError(f"probabilities sum to {p.sum()}, not 1")
        # softmax is monotone decreasing in distance, so the nearest class
        # must carry maximal probability (indices may differ only on ties)
        if p[int(self.distances.argmin())] != p.max():
            raise ValueError("argmax(probability) != argmin(distance)")

    @property
    def predicted(self) -> int:
        """Index of the predicted class within the class order."""
        return int(self.distances.argmin())


def compute_prototypes(by_class: Mapping[int, np.ndarray]) -> PrototypeSet:
    """Mean support embedding per class, iteration order = class order."""
    if not by_class:
        raise ValueError("no classes given")
    rows = []
    dim = None
    for cid, emb in by_class.items():
        emb = np.asarray(emb)
        if emb.ndim != 2 or emb.shape[0] == 0:
            raise ValueError(f"class {cid} needs a non-empty [K, D] embedding block, "
                             f"got shape {emb.shape}")
        if dim is None:
            dim = emb.shape[1]
        elif emb.shape[1] != dim:
            raise ValueError(f"class {cid} embedding dim {emb.shape[1]} != {dim}")
        # sorted per-dimension summation: permutation-order independent
        rows.append(np.sort(emb, axis=0).sum(axis=0) / emb.shape[0])
    return PrototypeSet(class_order=tuple(by_class), matrix=np.stack(rows))


def sq_euclidean(queries: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances: [Q, D] x [C, D] -> [Q, C]."""
    queries = np.atleast_2d(np.asarray(queries))
    prototypes = np.atleast_2d(np.asarray(prototypes))
    if queries.shape[1] != prototypes.shape[1]:
        raise ValueError(f"dim mismatch: {queries.shape} vs {prototypes.shape}")
    diff = queries[:, None, :] - prototypes[None, :, :]
    return np.einsum("qcd,qcd->qc", diff, diff)


def _softmax_neg(distances: np.ndarray) -> np.ndarray:
    logits = -distances
    logits = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


def classify(queries: np.ndarray, prototypes: PrototypeSet) -> list[QueryPrediction]:
    """Softmax over negative squared distances, one prediction per query."""
    d = sq_euclidean(queries, prototypes.matrix)
    probs = _softmax_neg(d)
    return [QueryPrediction(probabilities=probs[i], distances=d[i])
            for i in range(d.shape[0])]


def ce_loss(predictions: Sequence[QueryPrediction], true_idx: Sequence[int]) -> float:
    """Mean over queries of -log(probability of the true class)."""
    if len(predictions) != len(true_idx):
        raise ValueError(f"{len(predictions)} predictions vs {len(true_idx)} labels")
    if not predictions:
        raise ValueError("no predictions")
    total = 0.0
    for pred, t in zip(predictions, true_idx):
        t = int(t)
        if not 0 <= t < pred.probabilities.shape[0]:
            raise ValueError(f"label {t} outside class order of size "
                             f"{pred.probabilities.shape[0]}")
        total += -np.log(max(float(pred.probabilities[t]), LOG_FLOOR))
    return total / len(predictions)
