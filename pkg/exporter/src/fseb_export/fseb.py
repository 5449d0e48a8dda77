"""Writer for the FSEB v1 embedding-store wire format.

Layout (little-endian throughout)::

    magic  b"FSEB"
    u16    version (=1)
    u32    count
    u32    dim
    u32    provenance byte length, then UTF-8 provenance
    count records of:
        u32    id byte length, then UTF-8 id
        dim    float32 values

This is the interchange contract with the training engine; vectors are
written as float32 so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import struct
from typing import Mapping

import numpy as np

MAGIC = b"FSEB"
VERSION = 1


def write_store(path, vectors: Mapping[str, np.ndarray], dim: int,
                provenance: str) -> None:
    for sid, vec in vectors.items():
        if vec.shape != (dim,):
            raise ValueError(f"vector {sid!r} has shape {vec.shape}, expected ({dim},)")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HII", VERSION, len(vectors), dim))
        prov = provenance.encode("utf-8")
        f.write(struct.pack("<I", len(prov)))
        f.write(prov)
        for sid, vec in vectors.items():
            sid_bytes = sid.encode("utf-8")
            f.write(struct.pack("<I", len(sid_bytes)))
            f.write(sid_bytes)
            f.write(np.ascontiguousarray(vec, dtype="<f4").tobytes())
