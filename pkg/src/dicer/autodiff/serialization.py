"""On-disk tensor bundles.

A bundle is a directory holding ``manifest.json`` and one raw little-endian
float64 file per tensor. The manifest lists every tensor's file, shape, byte
count and SHA-256 digest next to free-form metadata, so truncation or
tampering is detected on load.
"""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from ..exceptions import CheckpointError

MANIFEST = "manifest.json"
FORMAT = "dicer-tensors/1"


def _filename(name):
    return name.replace("/", "__") + ".f64"


def write_tensors(directory, tensors, meta=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, arr in tensors.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        fname = _filename(name)
        (directory / fname).write_bytes(raw)
        entries[name] = {
            "file": fname,
            "shape": list(np.shape(arr)),
            "nbytes": len(raw),
            "sha256": hashlib.sha256(raw).hexdigest(),
        }
    manifest = {"format": FORMAT, "tensors": entries, "meta": meta or {}}
    tmp = directory / (MANIFEST + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, directory / MANIFEST)


def read_manifest(directory):
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise CheckpointError(f"no tensor manifest at {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt manifest {path}: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unsupported format {manifest.get('format')!r}")
    return manifest


def read_tensors(directory):
    """Return ``(tensors, meta)``; raises CheckpointError on any integrity failure."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    tensors = {}
    for name, entry in manifest["tensors"].items():
        path = directory / entry["file"]
        if not path.is_file():
            raise CheckpointError(f"tensor {name!r}: missing file {path}")
        raw = path.read_bytes()
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(
                f"tensor {name!r}: {path} holds {len(raw)} bytes, manifest says {entry['nbytes']} (truncated?)"
            )
        if hashlib.sha256(raw).hexdigest() != entry["sha256"]:
            raise CheckpointError(f"tensor {name!r}: checksum mismatch in {path}")
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).astype(np.float64)
    return tensors, manifest["meta"]
