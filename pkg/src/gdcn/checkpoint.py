"""Checkpoint files: one JSON manifest line, then a float64 little-endian blob.

Tensor offsets in the manifest are byte offsets into the blob, which starts
right after the newline ending the manifest.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .model import Model, Topology

FORMAT_VERSION = 1


def manifest_for(model: Model, schema_digest: str | None = None, extra=None) -> dict:
    tensors, offset = [], 0
    for name, arr in model.params.items():
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    manifest = {
        "format_version": FORMAT_VERSION,
        "schema_digest": schema_digest,
        "field_names": model.field_names,
        "field_sizes": model.field_sizes,
        "dims": model.dims,
        "topology": model.topology.to_json(),
        "tensors": tensors,
        "blob_bytes": offset,
    }
    if extra:
        manifest["extra"] = extra
    return manifest


def save_checkpoint(path, model: Model, schema_digest: str | None = None, extra=None) -> None:
    manifest = manifest_for(model, schema_digest, extra)
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(header + b"\n")
        for arr in model.params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: missing checkpoint manifest")
    try:
        manifest = json.loads(raw[:nl])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: unreadable manifest ({exc})") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {manifest.get('format_version')!r}")
    blob = raw[nl + 1:]
    if len(blob) != manifest.get("blob_bytes"):
        raise FormatError(f"{path}: blob has {len(blob)} bytes, manifest says "
                          f"{manifest.get('blob_bytes')}")
    tensors = {}
    for t in manifest["tensors"]:
        shape = tuple(t["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = t["offset"]
        tensors[t["name"]] = np.frombuffer(blob, dtype="<f8", count=count,
                                           offset=start).reshape(shape).astype(np.float64)
    return manifest, tensors


def load_checkpoint(path) -> tuple[Model, dict]:
    manifest, tensors = read_checkpoint(path)
    try:
        topology = Topology.from_json(manifest["topology"])
        model = Model(manifest["field_names"], manifest["field_sizes"], manifest["dims"],
                      topology, tensors)
    except (KeyError, ConfigError) as exc:
        raise FormatError(f"{path}: tensors do not match the recorded topology ({exc})") from exc
    return model, manifest


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
