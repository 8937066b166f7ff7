"""Checkpoints: a JSON manifest plus one raw little-endian float32 blob.

The manifest records the config snapshot, epoch and, for every parameter
and BN running statistic, its shape and element offset into the blob.
Offsets tile the blob exactly, in manifest order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


def save_checkpoint(state: dict[str, np.ndarray], path, config: dict, epoch: int) -> Path:
    """Write ``<path>`` (manifest) and ``<path stem>.bin`` next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob_path = path.with_suffix(".bin")
    entries, chunks, offset = [], [], 0
    for name, array in state.items():
        flat = np.ascontiguousarray(array, dtype="<f4").reshape(-1)
        entries.append({"name": name, "shape": list(array.shape), "offset": offset, "length": int(flat.size)})
        chunks.append(flat)
        offset += flat.size
    blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f4")
    blob_path.write_bytes(blob.tobytes())
    manifest = {
        "format_version": FORMAT_VERSION,
        "epoch": int(epoch),
        "config": config,
        "blob": blob_path.name,
        "total_length": int(offset),
        "tensors": entries,
    }
    path.write_text(json.dumps(manifest, indent=1))
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Returns ``(state, manifest)``; raises ValueError on any structural mismatch."""
    path = Path(path)
    manifest = json.loads(path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest.get('format_version')}")
    blob = np.frombuffer((path.parent / manifest["blob"]).read_bytes(), dtype="<f4")
    if blob.size != manifest["total_length"]:
        raise ValueError(f"blob holds {blob.size} floats, manifest expects {manifest['total_length']}")
    state, expected = {}, 0
    for entry in manifest["tensors"]:
        if entry["offset"] != expected:
            raise ValueError(f"offset gap before {entry['name']}")
        n = int(np.prod(entry["shape"], dtype=np.int64))
        if n != entry["length"]:
            raise ValueError(f"length mismatch for {entry['name']}")
        state[entry["name"]] = blob[expected:expected + n].reshape(entry["shape"]).astype(np.float32)
        expected += n
    if expected != blob.size:
        raise ValueError("manifest does not cover the whole blob")
    return state, manifest
