"""Binary checkpoint container.

Layout: magic "FTRL" | u32 version | u64 metadata length | metadata JSON |
tensor payload (named float64 little-endian sections) | sha256(payload).
The metadata carries the algorithm tag, step counters, the producing config's
digest, and the tensor/storage section index. The storage section is optional:
a container without it loads as a storage-discarded snapshot.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError

MAGIC = b"FTRL"
VERSION = 1


@dataclass
class CheckpointContainer:
    algorithm: str
    counters: dict[str, int]
    config_digest: str
    tensors: dict[str, np.ndarray]
    storage: dict[str, np.ndarray] | None = None
    captured_at: int = 0
    version: int = VERSION


def _index_sections(groups: list[tuple[str, dict[str, np.ndarray]]]):
    """Build the section index and the concatenated payload bytes."""
    index = {name: [] for name, _ in groups}
    chunks = []
    offset = 0
    for group_name, arrays in groups:
        for name, arr in arrays.items():
            data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            index[group_name].append(
                {"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)}
            )
            chunks.append(data)
            offset += len(data)
    return index, b"".join(chunks)


def save_checkpoint(container: CheckpointContainer, path: str) -> None:
    groups = [("tensors", container.tensors)]
    if container.storage is not None:
        groups.append(("storage", container.storage))
    index, payload = _index_sections(groups)
    meta = {
        "algorithm": container.algorithm,
        "counters": {k: int(v) for k, v in container.counters.items()},
        "config_digest": container.config_digest,
        "captured_at": int(container.captured_at),
        "tensors": index["tensors"],
        "storage": index.get("storage"),
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", container.version))
        fh.write(struct.pack("<Q", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(payload)
        fh.write(hashlib.sha256(payload).digest())
    os.replace(tmp, path)


def _read_sections(payload: bytes, index) -> dict[str, np.ndarray]:
    out = {}
    for entry in index:
        n = entry["nbytes"] // 8
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=entry["offset"])
        out[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    return out


def load_checkpoint(path: str, expected_config_digest: str | None = None) -> CheckpointContainer:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise CheckpointError(f"{path}: truncated header")
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes (not a checkpoint container)")
    version = struct.unpack_from("<I", blob, 4)[0]
    if version != VERSION:
        raise CheckpointError(
            f"{path}: container version {version}, this build reads version {VERSION}; "
            "upgrade the container or the software"
        )
    meta_len = struct.unpack_from("<Q", blob, 8)[0]
    meta_end = 16 + meta_len
    if len(blob) < meta_end:
        raise CheckpointError(f"{path}: truncated metadata")
    try:
        meta = json.loads(blob[16:meta_end])
    except ValueError as exc:
        raise CheckpointError(f"{path}: unreadable metadata ({exc})") from exc
    declared = sum(e["nbytes"] for e in meta["tensors"])
    if meta.get("storage"):
        declared += sum(e["nbytes"] for e in meta["storage"])
    payload = blob[meta_end : meta_end + declared]
    if len(payload) != declared or len(blob) < meta_end + declared + 32:
        raise CheckpointError(f"{path}: truncated payload")
    digest = blob[meta_end + declared : meta_end + declared + 32]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path}: payload digest mismatch (corrupted container)")
    if expected_config_digest is not None and meta["config_digest"] != expected_config_digest:
        raise CheckpointError(
            f"{path}: config digest mismatch (container was produced by a different config)"
        )
    return CheckpointContainer(
        algorithm=meta["algorithm"],
        counters={k: int(v) for k, v in meta["counters"].items()},
        config_digest=meta["config_digest"],
        tensors=_read_sections(payload, meta["tensors"]),
        storage=_read_sections(payload, meta["storage"]) if meta.get("storage") else None,
        captured_at=int(meta.get("captured_at", 0)),
        version=version,
    )
