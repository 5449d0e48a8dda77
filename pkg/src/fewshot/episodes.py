"""Dataset indexing, stratified splitting, and episodic task sampling.

An episode is one N-way K-shot task: N classes drawn uniformly without
replacement, and per class K support plus Q query samples drawn uniformly
without replacement, so support and query sets are always disjoint.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "DatasetIndex",
    "EpisodeSpec",
    "Episode",
    "EpisodeError",
    "stratified_split",
    "sample_episode",
    "episode_stream",
]


class EpisodeError(ValueError):
    pass


class DatasetIndex:
    """Immutable view of (sample-id, class-id) pairs plus the class table."""

    def __init__(self, samples: Iterable[tuple[str, int]], class_table: Mapping[int, str]):
        self.samples: tuple[tuple[str, int], ...] = tuple((str(s), int(c)) for s, c in samples)
        self.class_table: dict[int, str] = {int(k): str(v) for k, v in class_table.items()}
        seen: set[str] = set()
        self.by_class: dict[int, list[str]] = {c: [] for c in sorted(self.class_table)}
        for sid, cid in self.samples:
            if cid not in self.class_table:
                raise EpisodeError(f"sample {sid!r} has class {cid} missing from class table")
            if sid in seen:
                raise EpisodeError(f"duplicate sample id {sid!r}")
            seen.add(sid)
            self.by_class[cid].append(sid)

    @property
    def classes(self) -> list[int]:
        return sorted(self.class_table)

    def counts(self) -> dict[int, int]:
        return {c: len(ids) for c, ids in self.by_class.items()}

    def subset(self, sample_ids: Sequence[str]) -> "DatasetIndex":
        keep = set(sample_ids)
        return DatasetIndex([(s, c) for s, c in self.samples if s in keep], self.class_table)

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class EpisodeSpec:
    n_way: int
    k_shot: int
    q_query: int

    def __post_init__(self):
        if self.n_way < 2:
            raise EpisodeError(f"n_way must be >= 2, got {self.n_way}")
        if self.k_shot < 1:
            raise EpisodeError(f"k_shot must be >= 1, got {self.k_shot}")
        if self.q_query < 1:
            raise EpisodeError(f"q_query must be >= 1, got {self.q_query}")

    @property
    def samples_per_class(self) -> int:
        return self.k_shot + self.q_query


@dataclass(frozen=True)
class Episode:
    """Sampled task: support[i] and query[i] hold ids for classes[i]."""

    classes: tuple[int, ...]
    support: tuple[tuple[str, ...], ...]
    query: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if len(set(self.classes)) != len(self.classes):
            raise EpisodeError("episode classes must be distinct")
        if len(self.support) != len(self.classes) or len(self.query) != len(self.classes):
            raise EpisodeError("support/query groups must align with classes")
        all_ids = [sid for group in (*self.support, *self.query) for sid in group]
        if len(set(all_ids)) != len(all_ids):
            raise EpisodeError("a sample appears twice in the episode")

    def support_ids(self) -> list[str]:
        return [sid for group in self.support for sid in group]

    def query_ids(self) -> list[str]:
        return [sid for group in self.query for sid in group]


def stratified_split(
    index: DatasetIndex, train_fraction: float, seed: int
) -> tuple[DatasetIndex, DatasetIndex]:
    """Per-class proportional, sample-disjoint split, deterministic per seed."""
    if not 0.0 < train_fraction < 1.0:
        raise EpisodeError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    train_ids: list[str] = []
    test_ids: list[str] = []
    for cid in index.classes:
        ids = sorted(index.by_class[cid])
        n = len(ids)
        if n < 2:
            raise EpisodeError(f"class {cid} has {n} sample(s); need >= 2 to split")
        n_train = int(round(train_fraction * n))
        n_train = min(max(n_train, 1), n - 1)
        perm = rng.permutation(n)
        train_ids.extend(ids[i] for i in perm[:n_train])
        test_ids.extend(ids[i] for i in perm[n_train:])
    return index.subset(train_ids), index.subset(test_ids)


def _eligible_classes(index: DatasetIndex, spec: EpisodeSpec) -> list[int]:
    need = spec.samples_per_class
    return [c for c in index.classes if len(index.by_class[c]) >= need]


def sample_episode(index: DatasetIndex, spec: EpisodeSpec, rng: np.random.Generator) -> Episode:
    """Draw one episode: uniform classes, uniform within-class samples."""
    eligible = _eligible_classes(index, spec)
    if len(eligible) < spec.n_way:
        short = {c: len(index.by_class[c]) for c in index.classes if c not in eligible}
        raise EpisodeError(
            f"need {spec.n_way} classes with >= {spec.samples_per_class} samples, "
            f"only {len(eligible)} eligible (too small: {short})")
    chosen = rng.choice(len(eligible), size=spec.n_way, replace=False)
    classes = tuple(eligible[i] for i in chosen)
    support: list[tuple[str, ...]] = []
    query: list[tuple[str, ...]] = []
    for cid in classes:
        ids = sorted(index.by_class[cid])
        picks = rng.choice(len(ids), size=spec.samples_per_class, replace=False)
        picked = [ids[i] for i in picks]
        support.append(tuple(picked[:spec.k_shot]))
        query.append(tuple(picked[spec.k_shot:]))
    return Episode(classes=classes, support=tuple(support), query=tuple(query))


def episode_stream(index: DatasetIndex, spec: EpisodeSpec, count: int, seed: int) -> list[Episode]:
    """Deterministic sequence of ``count`` episodes for a seed."""
    if count < 0:
        raise EpisodeError(f"count must be >= 0, got {count}")
    rng = np.random.default_rng(seed)
    return [sample_episode(index, spec, rng) for _ in range(count)]
