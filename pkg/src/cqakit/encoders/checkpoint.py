"""Versioned tensor container for model checkpoints.

Layout: a magic line, a JSON manifest line (metadata plus a tensor
directory with dtypes/shapes/offsets and a payload checksum), then the raw
tensor bytes concatenated in directory order. Tensors are stored as
little-endian IEEE-754 floats regardless of host byte order.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

MAGIC = b"CQAKIT-CKPT v1\n"

_DTYPES = {"<f8": np.dtype("<f8"), "<f4": np.dtype("<f4")}


class CheckpointError(ValueError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


def save_checkpoint(path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    directory = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        code = "<f8" if arr.dtype == np.float64 else "<f4"
        raw = arr.astype(_DTYPES[code], copy=False).tobytes()
        directory.append(
            {"name": name, "dtype": code, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    manifest = {
        "meta": meta,
        "tensors": directory,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode() + b"\n")
        fh.write(payload)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        manifest_line = fh.readline()
        try:
            manifest = json.loads(manifest_line)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: bad manifest: {exc}") from None
        payload = fh.read()
    if hashlib.sha256(payload).hexdigest() != manifest.get("payload_sha256"):
        raise CheckpointError(f"{path}: payload checksum mismatch")
    tensors = {}
    for entry in manifest["tensors"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise CheckpointError(f"{path}: unsupported dtype {entry['dtype']!r}")
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"]).copy()
        tensors[entry["name"]] = arr.astype(np.float64 if entry["dtype"] == "<f8" else np.float32)
    return manifest["meta"], tensors
