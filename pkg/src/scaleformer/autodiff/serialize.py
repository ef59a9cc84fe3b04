"""Tensor archives: a little-endian raw payload plus a JSON manifest.

``<stem>.bin`` holds the concatenated arrays; ``<stem>.json`` lists each
entry's name, dtype, shape and byte offset alongside free-form metadata.
Manifests are written with sorted keys so identical content gives identical
bytes.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from scaleformer.errors import ContractError
from scaleformer.fileio import atomic_write_bytes, atomic_write_text

FORMAT = "scaleformer-tensors"
VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "uint8": "u1"}


def encode(tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> tuple[bytes, str]:
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dtype = arr.dtype.name
        if dtype not in _DTYPES:
            raise ContractError(f"cannot serialize {name!r} with dtype {dtype}")
        payload = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset, "nbytes": len(payload)})
        chunks.append(payload)
        offset += len(payload)
    manifest = {"format": FORMAT, "version": VERSION, "tensors": entries, "meta": dict(meta or {})}
    return b"".join(chunks), json.dumps(manifest, indent=1, sort_keys=True) + "\n"


def decode(payload: bytes, manifest_text: str) -> tuple[dict[str, np.ndarray], dict]:
    manifest = json.loads(manifest_text)
    if manifest.get("format") != FORMAT:
        raise ContractError("not a tensor manifest")
    if manifest.get("version") != VERSION:
        raise ContractError(f"unsupported tensor format version {manifest.get('version')}")
    tensors = {}
    for e in manifest["tensors"]:
        end = e["offset"] + e["nbytes"]
        if end > len(payload):
            raise ContractError(f"payload truncated at tensor {e['name']!r}")
        arr = np.frombuffer(payload, dtype=_DTYPES[e["dtype"]], count=int(np.prod(e["shape"], dtype=np.int64)), offset=e["offset"])
        tensors[e["name"]] = arr.astype(e["dtype"]).reshape(e["shape"])
    return tensors, manifest["meta"]


def save(stem, tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    stem = Path(stem)
    payload, manifest = encode(tensors, meta)
    atomic_write_bytes(stem.with_suffix(".bin"), payload)
    atomic_write_text(stem.with_suffix(".json"), manifest)


def load(stem) -> tuple[dict[str, np.ndarray], dict]:
    stem = Path(stem)
    return decode(stem.with_suffix(".bin").read_bytes(), stem.with_suffix(".json").read_text("utf-8"))
