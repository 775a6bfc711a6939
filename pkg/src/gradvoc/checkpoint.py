"""Flat tensor-archive checkpoint format.

Layout: an ASCII magic line, an 8-byte little-endian manifest length, a JSON
manifest, then the raw tensor payloads concatenated in manifest order.  Each
manifest entry records name, dtype, shape, offset and byte count; the
manifest also carries a SHA-256 checksum of the payload blob, verified on
read.  All payloads are little-endian.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

__all__ = ["save_tensors", "load_tensors", "CheckpointError"]

_MAGIC = b"GVMODEL1\n"
_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


class CheckpointError(ValueError):
    """Malformed or corrupted checkpoint archive."""


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict | None = None):
    """Write named arrays (and optional string-valued metadata) to ``path``."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        dtype_code = le.dtype.str
        if dtype_code not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
        entries.append(
            {
                "name": name,
                "dtype": dtype_code,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    payload = b"".join(blobs)
    manifest = {
        "entries": entries,
        "sha256": hashlib.sha256(payload).hexdigest(),
        "meta": meta or {},
    }
    manifest_raw = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(manifest_raw)))
        fh.write(manifest_raw)
        fh.write(payload)


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a tensor archive, verifying the manifest checksum."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise CheckpointError(f"{path}: not a tensor archive (bad magic)")
        (mlen,) = struct.unpack("<Q", fh.read(8))
        try:
            manifest = json.loads(fh.read(mlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt manifest: {exc}") from exc
        payload = fh.read()
    if hashlib.sha256(payload).hexdigest() != manifest.get("sha256"):
        raise CheckpointError(f"{path}: payload checksum mismatch")
    tensors = {}
    for entry in manifest["entries"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise CheckpointError(f"{path}: unknown dtype {entry['dtype']!r}")
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(dtype.newbyteorder("="))
    return tensors, manifest.get("meta", {})
