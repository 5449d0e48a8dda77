"""Class-aware margin loss on prototype distances.

For each episode class the loss looks at unsquared Euclidean distances
from the class prototype: the mean and maximum over the class's own
(positive) support embeddings, and the minimum over the other classes'
(negative) support embeddings.  Two hinge terms press the farthest
positive inside the nearest negative by a margin, and press the farthest
positive toward the mean:

    per-class = relu(d_max_pos - d_min_neg + margin) + relu(d_max_pos - c)

The per-class values are averaged over the episode's classes so the scale
does not depend on n_way.  Negatives are support embeddings only, keeping
the loss a function of the same set the prototypes come from.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import isfinite
from typing import Sequence

import numpy as np

__all__ = ["CalTerms", "LossBreakdown", "cal_terms", "cal_loss", "combined_loss"]

_MEAN_MAX_TOL = 1e-9


@dataclass(frozen=True)
class CalTerms:
    """Distance statistics for one class within an episode."""

    central: float          # mean distance, positives to prototype
    d_max_pos: float        # max distance, positives to prototype
    d_min_neg: float        # min distance, negatives to prototype
    n_pos: int
    n_neg: int

    def __post_init__(self):
        if self.n_pos < 1 or self.n_neg < 1:
            raise ValueError("need at least one positive and one negative")
        if min(self.central, self.d_max_pos, self.d_min_neg) < 0:
            raise ValueError("distances must be non-negative")
        if self.central > self.d_max_pos * (1 + _MEAN_MAX_TOL) + _MEAN_MAX_TOL:
            raise ValueError(f"mean distance {self.central} exceeds max {self.d_max_pos}")


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    l_ca: float
    l_comb: float
    margin: float

    def __post_init__(self):
        if self.l_ca < 0:
            raise ValueError(f"l_ca must be >= 0, got {self.l_ca}")
        if self.l_comb != self.ce + self.l_ca:
            raise ValueError("l_comb must equal ce + l_ca exactly")


def cal_terms(prototype: np.ndarray, positives: np.ndarray,
              negatives: np.ndarray) -> CalTerms:
    """Distance statistics of one prototype against its positives/negatives."""
    positives = np.atleast_2d(np.asarray(positives))
    negatives = np.atleast_2d(np.asarray(negatives))
    if positives.shape[0] == 0:
        raise ValueError("empty positive set")
    if negatives.shape[0] == 0:
        raise ValueError("empty negative set")
    prototype = np.asarray(prototype).reshape(-1)
    d_pos = np.linalg.norm(positives - prototype, axis=1)
    d_neg = np.linalg.norm(negatives - prototype, axis=1)
    return CalTerms(
        central=float(d_pos.mean()),
        d_max_pos=float(d_pos.max()),
        d_min_neg=float(d_neg.min()),
        n_pos=positives.shape[0],
        n_neg=negatives.shape[0],
    )


def cal_loss(terms: Sequence[CalTerms], margin: float) -> float:
    """Hinge terms per class, averaged over the episode's classes."""
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    if not terms:
        raise ValueError("no per-class terms")
    total = 0.0
    for t in terms:
        total += max(t.d_max_pos - t.d_min_neg + margin, 0.0)
        total += max(t.d_max_pos - t.central, 0.0)
    return total / len(terms)


def combined_loss(ce: float, l_ca: float, margin: float = 0.0) -> LossBreakdown:
    """Cross-entropy plus the class-aware term, with the breakdown retained."""
    if not (isfinite(ce) and isfinite(l_ca)):
        raise ValueError(f"non-finite loss inputs: ce={ce}, l_ca={l_ca}")
    if ce < 0 or l_ca < 0:
        raise ValueError(f"loss terms must be >= 0: ce={ce}, l_ca={l_ca}")
    return LossBreakdown(ce=ce, l_ca=l_ca, l_comb=ce + l_ca, margin=margin)
