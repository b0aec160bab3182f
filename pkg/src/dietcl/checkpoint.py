"""Learner checkpoints: a JSON header followed by raw little-endian arrays.

Layout (all integers little-endian)::

    8 bytes   magic b"DIETCKPT"
    4 bytes   uint32 format version (currently 1)
    8 bytes   uint64 header length H
    H bytes   UTF-8 JSON header {"format", "learner", "arrays": [...]}
    payload   arrays back to back, offsets relative to the payload start

Each ``arrays`` entry is ``{"name", "dtype", "shape", "offset", "nbytes"}``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from dietcl.errors import ParseError
from dietcl.learners import Learner, learner_from_state

MAGIC = b"DIETCKPT"
FORMAT_VERSION = 1


def dumps(learner: Learner) -> bytes:
    meta, arrays = learner.state()
    entries, chunks, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        dtype = "<i8" if arr.dtype.kind in "iub" else "<f8"
        raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"format": FORMAT_VERSION, "learner": meta, "arrays": entries},
                        sort_keys=True).encode()
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(header)) + header + b"".join(chunks)


def loads(blob: bytes) -> Learner:
    if blob[:8] != MAGIC:
        raise ParseError("not a dietcl checkpoint (bad magic)")
    version, hlen = struct.unpack("<IQ", blob[8:20])
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported checkpoint format {version}")
    header = json.loads(blob[20:20 + hlen])
    payload = memoryview(blob)[20 + hlen:]
    arrays = {}
    for e in header["arrays"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype=e["dtype"]).reshape(e["shape"]).copy()
    return learner_from_state(header["learner"], arrays)


def save(learner: Learner, path) -> None:
    Path(path).write_bytes(dumps(learner))


def load(path) -> Learner:
    return loads(Path(path).read_bytes())
