"""Embedding encoders: toy trainable networks and a frozen-vector projection.

Three kinds stand in for large pre-trained backbones at desk scale:

  * ``mlp``: fully connected relu stack over flat feature vectors.
  * ``conv-toy``: stacked [3x3 conv, relu, 2x2 max-pool] blocks followed by
    a linear map to the embedding dimension (the standard small few-shot
    backbone).
  * ``frozen-projection``: precomputed embeddings from an external store
    passed through a single trainable linear projection; gradients flow
    only through the projection.

All parameters are initialized He-style: uniform(-limit, limit) with
limit = sqrt(6 / fan_in), biases zero, seeded deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Parameter

__all__ = [
    "EncoderSpec",
    "EncoderConfigError",
    "UnknownSampleError",
    "FrozenEmbeddingStore",
    "MlpEncoder",
    "ConvToyEncoder",
    "FrozenProjectionEncoder",
    "init_encoder",
]

KINDS = ("mlp", "conv-toy", "frozen-projection")


class EncoderConfigError(ValueError):
    pass


class UnknownSampleError(KeyError):
    pass


@dataclass(frozen=True)
class EncoderSpec:
    """Architecture description; enough to rebuild an encoder from a checkpoint."""

    kind: str
    input_shape: tuple[int, ...]
    embedding_dim: int = 128
    hidden: tuple[int, ...] = (64, 64)
    channels: tuple[int, ...] = (64, 64, 64, 64)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise EncoderConfigError(f"unknown encoder kind {self.kind!r}")
        if self.embedding_dim < 2:
            raise EncoderConfigError(f"embedding_dim must be >= 2, got {self.embedding_dim}")
        expected = 3 if self.kind == "conv-toy" else 1
        if len(self.input_shape) != expected:
            raise EncoderConfigError(
                f"{self.kind} expects input_shape of length {expected}, "
                f"got {self.input_shape}")
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "hidden", tuple(int(d) for d in self.hidden))
        object.__setattr__(self, "channels", tuple(int(d) for d in self.channels))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "input_shape": list(self.input_shape),
            "embedding_dim": self.embedding_dim,
            "hidden": list(self.hidden),
            "channels": list(self.channels),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderSpec":
        return cls(
            kind=d["kind"],
            input_shape=tuple(d["input_shape"]),
            embedding_dim=int(d["embedding_dim"]),
            hidden=tuple(d["hidden"]),
            channels=tuple(d["channels"]),
            seed=int(d["seed"]),
        )


@dataclass
class FrozenEmbeddingStore:
    """Precomputed sample-id -> embedding vectors from an external backbone."""

    vectors: dict[str, np.ndarray]
    source_dim: int
    provenance: str = ""

    def __post_init__(self):
        for sid, vec in self.vectors.items():
            if vec.shape != (self.source_dim,):
                raise ValueError(f"vector for {sid!r} has shape {vec.shape}, "
                                 f"expected ({self.source_dim},)")

    def __len__(self) -> int:
        return len(self.vectors)

    def batch(self, sample_ids: Sequence[str]) -> np.ndarray:
        rows = []
        for sid in sample_ids:
            if sid not in self.vectors:
                raise UnknownSampleError(f"sample id {sid!r} not in frozen store")
            rows.append(self.vectors[sid])
        return np.stack(rows)


def _he_uniform(rng: np.random.Generator, fan_in: int, shape, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class _EncoderBase:
    spec: EncoderSpec
    params: dict[str, Parameter]

    def parameters(self) -> list[Parameter]:
        return [self.params[name] for name in sorted(self.params)]

    def _check_batch(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch)
        if batch.shape[0] == 0:
            raise ValueError("empty batch")
        if batch.shape[1:] != self.spec.input_shape:
            raise ValueError(f"sample shape {batch.shape[1:]} does not match "
                             f"encoder input shape {self.spec.input_shape}")
        return batch


class MlpEncoder(_EncoderBase):
    def __init__(self, spec: EncoderSpec, dtype=np.float32):
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        sizes = [spec.input_shape[0], *spec.hidden, spec.embedding_dim]
        self.params = {}
        for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            self.params[f"w{i}"] = Parameter(_he_uniform(rng, fan_in, (fan_in, fan_out), dtype), f"w{i}")
            self.params[f"b{i}"] = Parameter(np.zeros(fan_out, dtype=dtype), f"b{i}")
        self.n_layers = len(sizes) - 1

    def embed(self, batch) -> Node:
        """[B, d_in] -> [B, embedding_dim] with relu between layers."""
        x = ad.as_node(self._check_batch(batch) if not isinstance(batch, Node) else batch)
        h = x
        for i in range(self.n_layers):
            h = ad.matmul(h, self.params[f"w{i}"]) + self.params[f"b{i}"]
            if i < self.n_layers - 1:
                h = ad.relu(h)
        return h


class ConvToyEncoder(_EncoderBase):
    """Stacked conv/relu/pool blocks, then flatten and project."""

    def __init__(self, spec: EncoderSpec, dtype=np.float32):
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        c, h, w = spec.input_shape
        self.params = {}
        cin = c
        for i, cout in enumerate(spec.channels):
            fan_in = cin * 9
            self.params[f"conv{i}_w"] = Parameter(
                _he_uniform(rng, fan_in, (cout, cin, 3, 3), dtype), f"conv{i}_w")
            self.params[f"conv{i}_b"] = Parameter(np.zeros(cout, dtype=dtype), f"conv{i}_b")
            cin = cout
            h, w = h // 2, w // 2
            if h < 1 or w < 1:
                raise EncoderConfigError(
                    f"input {spec.input_shape} too small for {len(spec.channels)} pooling stages")
        self.flat_dim = cin * h * w
        self.params["head_w"] = Parameter(
            _he_uniform(rng, self.flat_dim, (self.flat_dim, spec.embedding_dim), dtype), "head_w")
        self.params["head_b"] = Parameter(np.zeros(spec.embedding_dim, dtype=dtype), "head_b")

    def embed(self, batch) -> Node:
        """[B, C, H, W] -> [B, embedding_dim]."""
        x = ad.as_node(self._check_batch(batch) if not isinstance(batch, Node) else batch)
        h = x
        for i in range(len(self.spec.channels)):
            h = ad.conv2d(h, self.params[f"conv{i}_w"], self.params[f"conv{i}_b"])
            h = ad.relu(h)
            h = ad.maxpool2x2(h)
        h = ad.reshape(h, (h.value.shape[0], self.flat_dim))
        return ad.matmul(h, self.params["head_w"]) + self.params["head_b"]


class FrozenProjectionEncoder(_EncoderBase):
    """Trainable linear projection over frozen precomputed embeddings.

    Accepts either raw vectors [B, source_dim] or sample ids resolved
    against the attached store.  The store is never modified.
    """

    def __init__(self, spec: EncoderSpec, dtype=np.float32,
                 store: FrozenEmbeddingStore | None = None):
        self.spec = spec
        self.store = store
        source_dim = spec.input_shape[0]
        if store is not None and store.source_dim != source_dim:
            raise EncoderConfigError(f"store dim {store.source_dim} does not match "
                                     f"spec input {source_dim}")
        rng = np.random.default_rng(spec.seed)
        self.params = {
            "proj": Parameter(_he_uniform(rng, source_dim,
                                          (source_dim, spec.embedding_dim), dtype), "proj"),
        }

    def embed(self, batch) -> Node:
        if isinstance(batch, (list, tuple)) and batch and isinstance(batch[0], str):
            if self.store is None:
                raise ValueError("sample-id batch requires an attached store")
            batch = self.store.batch(batch).astype(self.params["proj"].value.dtype)
        x = ad.as_node(self._check_batch(batch) if not isinstance(batch, Node) else batch)
        return ad.matmul(x, self.params["proj"])


def init_encoder(spec: EncoderSpec, dtype=np.float32,
                 store: FrozenEmbeddingStore | None = None):
    """Build an encoder with deterministic, seeded He-uniform parameters."""
    if spec.kind == "mlp":
        return MlpEncoder(spec, dtype)
    if spec.kind == "conv-toy":
        return ConvToyEncoder(spec, dtype)
    return FrozenProjectionEncoder(spec, dtype, store=store)
