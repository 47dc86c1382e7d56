"""Versioned binary checkpoint container.

Layout: ``MAGIC | u16 version | u64 header length | JSON header | float64 LE payload``.
The header maps each parameter path to its shape and offset and carries a
SHA-256 of the payload, so a damaged file is rejected before anything is
handed back to the caller.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

MAGIC = b"SENDICKP"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<HQ")


class CheckpointError(ValueError):
    """The checkpoint is corrupted or was written by an incompatible version."""


def dump_checkpoint(arrays: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for path, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"path": path, "shape": list(arr.shape), "offset": offset,
                        "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.size
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "meta": meta or {},
        "tensors": entries,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + _PREFIX.pack(FORMAT_VERSION, len(raw)) + raw + payload


def load_checkpoint(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(blob) < len(MAGIC) + _PREFIX.size or not blob.startswith(MAGIC):
        raise CheckpointError("not a checkpoint (bad magic)")
    version, hlen = _PREFIX.unpack_from(blob, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format {version} is incompatible with {FORMAT_VERSION}")
    start = len(MAGIC) + _PREFIX.size
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupted checkpoint header: {exc}") from None
    if not isinstance(header, dict) or header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError("corrupted or incompatible checkpoint header")
    payload = blob[start + hlen:]
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CheckpointError("checkpoint payload does not match its checksum")
    flat = np.frombuffer(payload, dtype="<f8")
    arrays = {}
    for e in header["tensors"]:
        chunk = flat[e["offset"]:e["offset"] + e["count"]]
        if chunk.size != e["count"]:
            raise CheckpointError(f"truncated tensor {e['path']!r}")
        arrays[e["path"]] = chunk.reshape(e["shape"]).astype(np.float64)
    return arrays, header["meta"]
