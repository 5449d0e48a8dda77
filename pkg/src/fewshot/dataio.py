"""File formats: embedding stores, dataset manifests, checkpoints, reports.

All binary layouts are little-endian and versioned; readers reject wrong
magic, unsupported versions, truncation and size inconsistencies with
distinct error types rather than producing garbage.

Embedding store (FSEB v1)::

    magic  b"FSEB"
    u16    version (=1)
    u32    count
    u32    dim
    u32    provenance byte length, then UTF-8 provenance
    count records of:
        u32    id byte length, then UTF-8 id
        dim    float32 values

Checkpoint (FSCP v1): magic b"FSCP", u16 version, u32 header length, a
canonical JSON header (encoder spec, parameter table, optimizer scalars,
extra metadata), then the raw parameter and moment buffers in header order.

Reports are canonical JSON (sorted keys, fixed separators), so a
read/rewrite cycle is byte-identical.
"""

from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass
from typing import BinaryIO, Mapping, Sequence

import numpy as np

from .encoders import EncoderSpec, FrozenEmbeddingStore, init_encoder
from .episodes import DatasetIndex
from .optim import AdamState

__all__ = [
    "FormatError",
    "BadMagicError",
    "UnsupportedVersionError",
    "TruncatedPayloadError",
    "DimensionMismatchError",
    "ManifestError",
    "write_embedding_store",
    "read_embedding_store",
    "load_frozen",
    "TensorDataset",
    "save_dataset",
    "load_dataset",
    "load_frozen_dataset",
    "save_checkpoint",
    "load_checkpoint",
    "write_report",
    "read_report",
    "write_predictions",
    "read_predictions",
    "canonical_json",
]

FSEB_MAGIC = b"FSEB"
FSEB_VERSION = 1
CHECKPOINT_MAGIC = b"FSCP"
CHECKPOINT_VERSION = 1
REPORT_SCHEMA_VERSION = 1
MANIFEST_SCHEMA_VERSION = 1


class FormatError(ValueError):
    """Base class for malformed files."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class DimensionMismatchError(FormatError):
    pass


class ManifestError(FormatError):
    pass


def canonical_json(doc) -> str:
    """Deterministic JSON rendering; identical input -> identical bytes."""
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


# --- embedding store (FSEB) -------------------------------------------------

def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise TruncatedPayloadError(f"unexpected end of payload while reading {what}")
    return data


def write_embedding_store(path, store: FrozenEmbeddingStore) -> None:
    for sid, vec in store.vectors.items():
        if vec.shape != (store.source_dim,):
            raise DimensionMismatchError(
                f"dimension mismatch: vector {sid!r} has length {vec.shape}, "
                f"store dim is {store.source_dim}")
    with open(path, "wb") as f:
        f.write(FSEB_MAGIC)
        f.write(struct.pack("<HII", FSEB_VERSION, len(store.vectors), store.source_dim))
        prov = store.provenance.encode("utf-8")
        f.write(struct.pack("<I", len(prov)))
        f.write(prov)
        for sid, vec in store.vectors.items():
            sid_bytes = sid.encode("utf-8")
            f.write(struct.pack("<I", len(sid_bytes)))
            f.write(sid_bytes)
            f.write(np.ascontiguousarray(vec, dtype="<f4").tobytes())


def read_embedding_store(path, expected_dim: int | None = None) -> FrozenEmbeddingStore:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != FSEB_MAGIC:
            raise BadMagicError(f"bad magic {magic!r}, expected {FSEB_MAGIC!r}")
        version, count, dim = struct.unpack("<HII", _read_exact(f, 10, "header"))
        if version != FSEB_VERSION:
            raise UnsupportedVersionError(f"unsupported version {version}")
        if expected_dim is not None and dim != expected_dim:
            raise DimensionMismatchError(
                f"dimension mismatch: header dim {dim}, expected {expected_dim}")
        (prov_len,) = struct.unpack("<I", _read_exact(f, 4, "provenance length"))
        provenance = _read_exact(f, prov_len, "provenance").decode("utf-8")
        vectors: dict[str, np.ndarray] = {}
        for i in range(count):
            (id_len,) = struct.unpack("<I", _read_exact(f, 4, f"id length of record {i}"))
            sid = _read_exact(f, id_len, f"id of record {i}").decode("utf-8")
            raw = _read_exact(f, 4 * dim, f"vector of record {i}")
            if sid in vectors:
                raise FormatError(f"duplicate sample id {sid!r}")
            vectors[sid] = np.frombuffer(raw, dtype="<f4").copy()
        trailing = f.read()
        if trailing:
            raise DimensionMismatchError(
                f"dimension mismatch: {len(trailing)} trailing bytes after final record")
    return FrozenEmbeddingStore(vectors=vectors, source_dim=dim, provenance=provenance)


def load_frozen(path, expected_dim: int | None = None) -> FrozenEmbeddingStore:
    """Alias for read_embedding_store; the engine-facing entry point."""
    return read_embedding_store(path, expected_dim=expected_dim)


# --- raw tensor datasets ----------------------------------------------------

@dataclass
class TensorDataset:
    """Class-labeled samples backed by one contiguous float array."""

    class_table: dict[int, str]
    sample_ids: list[str]
    sample_classes: list[int]
    payload: np.ndarray  # [n_samples, *sample_shape]
    normalized: bool = False

    def __post_init__(self):
        if len(self.sample_ids) != len(self.sample_classes):
            raise ManifestError("sample ids and classes differ in length")
        if self.payload.shape[0] != len(self.sample_ids):
            raise ManifestError(f"payload rows {self.payload.shape[0]} != "
                                f"{len(self.sample_ids)} samples")
        self._row = {sid: i for i, sid in enumerate(self.sample_ids)}
        if len(self._row) != len(self.sample_ids):
            raise ManifestError("duplicate sample ids")

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return self.payload.shape[1:]

    def index(self) -> DatasetIndex:
        return DatasetIndex(zip(self.sample_ids, self.sample_classes), self.class_table)

    def tensor(self, sample_id: str) -> np.ndarray:
        return self.payload[self._row[sample_id]]

    def batch(self, sample_ids: Sequence[str]) -> np.ndarray:
        return self.payload[[self._row[s] for s in sample_ids]]


def save_dataset(dataset: TensorDataset, manifest_path, payload_path) -> None:
    payload = np.ascontiguousarray(dataset.payload, dtype="<f4")
    item_bytes = int(np.prod(dataset.sample_shape, dtype=np.int64)) * 4 if dataset.sample_shape else 4
    samples = []
    for i, (sid, cid) in enumerate(zip(dataset.sample_ids, dataset.sample_classes)):
        samples.append({"id": sid, "class": cid,
                        "offset": i * item_bytes, "length": item_bytes})
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "kind": "raw-tensors",
        "dtype": "float32",
        "sample_shape": list(dataset.sample_shape),
        "normalized": dataset.normalized,
        "classes": {str(c): name for c, name in dataset.class_table.items()},
        "payload": os.path.relpath(payload_path, os.path.dirname(os.path.abspath(manifest_path))),
        "samples": samples,
    }
    with open(payload_path, "wb") as f:
        f.write(payload.tobytes())
    with open(manifest_path, "w", encoding="utf-8") as f:
        f.write(canonical_json(manifest))


def load_dataset(manifest_path) -> TensorDataset:
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise UnsupportedVersionError(
            f"unsupported manifest schema {manifest.get('schema_version')}")
    if manifest.get("kind") != "raw-tensors":
        raise ManifestError(f"unexpected manifest kind {manifest.get('kind')!r}")
    shape = tuple(manifest["sample_shape"])
    item_bytes = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
    payload_path = manifest["payload"]
    if not os.path.isabs(payload_path):
        payload_path = os.path.join(os.path.dirname(os.path.abspath(manifest_path)),
                                    payload_path)
    with open(payload_path, "rb") as f:
        raw = f.read()
    if len(raw) % item_bytes != 0:
        raise ManifestError(f"payload size {len(raw)} is not a multiple of "
                            f"sample size {item_bytes}")
    ids, classes, offsets = [], [], []
    for rec in manifest["samples"]:
        off, length = int(rec["offset"]), int(rec["length"])
        if length != item_bytes:
            raise ManifestError(f"record {rec['id']!r} length {length} != "
                                f"sample size {item_bytes}")
        if off % item_bytes != 0:
            raise ManifestError(f"record {rec['id']!r} offset {off} misaligned")
        if off + length > len(raw):
            raise TruncatedPayloadError(
                f"unexpected end of payload: record {rec['id']!r} ends at "
                f"{off + length}, payload has {len(raw)} bytes")
        ids.append(str(rec["id"]))
        classes.append(int(rec["class"]))
        offsets.append(off)
    if len(set(offsets)) != len(offsets):
        raise ManifestError("overlapping sample offsets")
    payload = np.frombuffer(raw, dtype="<f4").reshape(len(raw) // item_bytes, *shape).copy()
    rows = [off // item_bytes for off in offsets]
    return TensorDataset(
        class_table={int(k): v for k, v in manifest["classes"].items()},
        sample_ids=ids,
        sample_classes=classes,
        payload=payload[rows],
        normalized=bool(manifest.get("normalized", False)),
    )


def load_frozen_dataset(fseb_path, labels_path) -> tuple[TensorDataset, FrozenEmbeddingStore]:
    """Join an FSEB store with a label manifest into a trainable dataset.

    The label manifest is the JSON the exporter writes next to the store:
    ``{"schema_version": 1, "classes": {...}, "samples": [{"id", "class"}]}``.
    """
    store = read_embedding_store(fseb_path)
    with open(labels_path, "r", encoding="utf-8") as f:
        labels = json.load(f)
    if labels.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise UnsupportedVersionError(
            f"unsupported label schema {labels.get('schema_version')}")
    ids, classes = [], []
    for rec in labels["samples"]:
        sid = str(rec["id"])
        if sid not in store.vectors:
            raise ManifestError(f"labeled sample {sid!r} missing from store")
        ids.append(sid)
        classes.append(int(rec["class"]))
    payload = np.stack([store.vectors[s] for s in ids]).astype(np.float32)
    dataset = TensorDataset(
        class_table={int(k): v for k, v in labels["classes"].items()},
        sample_ids=ids,
        sample_classes=classes,
        payload=payload,
    )
    return dataset, store


# --- checkpoints ------------------------------------------------------------

_DTYPE_TAGS = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(path, encoder, adam: AdamState | None,
                    extra: Mapping | None = None) -> None:
    """Encoder spec + parameters + optimizer state, bit-exact round trip."""
    params = encoder.parameters()
    dtype_name = str(params[0].value.dtype)
    if dtype_name not in _DTYPE_TAGS:
        raise FormatError(f"unsupported parameter dtype {dtype_name}")
    header = {
        "encoder_spec": encoder.spec.to_dict(),
        "dtype": dtype_name,
        "params": [{"name": p.name, "shape": list(p.value.shape)} for p in params],
        "adam": None if adam is None else {
            "learning_rate": adam.learning_rate,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "epsilon": adam.epsilon,
            "step_count": adam.step_count,
        },
        "extra": dict(extra) if extra else {},
    }
    header_bytes = canonical_json(header).encode("utf-8")
    tag = _DTYPE_TAGS[dtype_name]
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<HI", CHECKPOINT_VERSION, len(header_bytes)))
    buf.write(header_bytes)
    for p in params:
        buf.write(np.ascontiguousarray(p.value, dtype=tag).tobytes())
    if adam is not None:
        for p in params:
            m, v = adam.moments_for(p)
            buf.write(np.ascontiguousarray(m, dtype=tag).tobytes())
            buf.write(np.ascontiguousarray(v, dtype=tag).tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path, store: FrozenEmbeddingStore | None = None):
    """Rebuild (encoder, adam_state, extra) from a checkpoint file."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise BadMagicError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        version, header_len = struct.unpack("<HI", _read_exact(f, 6, "header"))
        if version != CHECKPOINT_VERSION:
            raise UnsupportedVersionError(f"unsupported version {version}")
        header = json.loads(_read_exact(f, header_len, "header json").decode("utf-8"))
        spec = EncoderSpec.from_dict(header["encoder_spec"])
        tag = _DTYPE_TAGS[header["dtype"]]
        dtype = np.dtype(header["dtype"])
        encoder = init_encoder(spec, dtype=dtype, store=store)
        declared = {p["name"]: tuple(p["shape"]) for p in header["params"]}
        actual = {p.name: p.value.shape for p in encoder.parameters()}
        if declared != actual:
            raise FormatError(f"parameter table mismatch: file {declared}, "
                              f"encoder {actual}")

        def read_block(shape, what):
            n = int(np.prod(shape, dtype=np.int64)) if shape else 1
            raw = _read_exact(f, n * dtype.itemsize, what)
            return np.frombuffer(raw, dtype=tag).reshape(shape).astype(dtype, copy=True)

        for p in encoder.parameters():
            p.value = read_block(p.value.shape, f"parameter {p.name}")
        adam = None
        if header["adam"] is not None:
            a = header["adam"]
            adam = AdamState(learning_rate=a["learning_rate"], beta1=a["beta1"],
                             beta2=a["beta2"], epsilon=a["epsilon"],
                             step_count=int(a["step_count"]))
            for p in encoder.parameters():
                adam.m[p.name] = read_block(p.value.shape, f"adam m of {p.name}")
                adam.v[p.name] = read_block(p.value.shape, f"adam v of {p.name}")
        if f.read(1):
            raise FormatError("trailing bytes after checkpoint payload")
    return encoder, adam, header.get("extra", {})


# --- reports and prediction files -------------------------------------------

def write_report(path, doc: Mapping) -> None:
    """Write a structured result document with the schema version stamped in."""
    out = dict(doc)
    out["schema_version"] = REPORT_SCHEMA_VERSION
    with open(path, "w", encoding="utf-8") as f:
        f.write(canonical_json(out))


def read_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise UnsupportedVersionError(f"unsupported report schema "
                                      f"{doc.get('schema_version')}")
    return doc


def write_predictions(path, matrix) -> None:
    """Serialize a PredictionMatrix so ensembles can be built offline."""
    write_report(path, {"predictions": matrix.to_dict()})


def read_predictions(path):
    from .ensemble import PredictionMatrix
    doc = read_report(path)
    if "predictions" not in doc:
        raise ManifestError("file does not contain a prediction matrix")
    return PredictionMatrix.from_dict(doc["predictions"])
