"""Checkpoint format: ``<stem>.manifest`` (text) + ``<stem>.bin`` (little-endian float32 blob).

Manifest lines::

    reco-checkpoint 1
    meta <key> <json value>
    tensor <name> <source dtype> <comma-separated shape> <offset in floats> <count>

Integer tensors are stored as float32 and restored to their source dtype; values must
be exactly representable (|x| < 2**24).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .errors import DataError, ParameterError

MAGIC = "reco-checkpoint 1"
_EXACT_INT = 2**24


def _paths(stem: str | Path) -> tuple[Path, Path]:
    stem = Path(stem)
    if stem.suffix in (".manifest", ".bin"):
        stem = stem.with_suffix("")
    return stem.with_suffix(".manifest"), stem.with_suffix(".bin")


def save_checkpoint(stem: str | Path, tensors: dict[str, torch.Tensor], meta: dict[str, Any]) -> Path:
    manifest_path, blob_path = _paths(stem)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    lines = [MAGIC]
    for key, value in meta.items():
        if " " in key:
            raise ParameterError(f"meta key {key!r} contains whitespace")
        lines.append(f"meta {key} {json.dumps(value, sort_keys=True)}")
    chunks = []
    offset = 0
    for name, t in tensors.items():
        if " " in name:
            raise ParameterError(f"tensor name {name!r} contains whitespace")
        t = t.detach().cpu()
        if not t.is_floating_point() and t.numel() and t.abs().max() >= _EXACT_INT:
            raise ParameterError(f"integer tensor {name} not exactly representable in float32")
        arr = t.to(torch.float32).numpy().astype("<f4", copy=False).ravel()
        shape = ",".join(str(s) for s in t.shape) or "-"
        dtype = str(t.dtype).replace("torch.", "")
        lines.append(f"tensor {name} {dtype} {shape} {offset} {arr.size}")
        chunks.append(arr.tobytes())
        offset += arr.size
    tmp_blob = blob_path.with_suffix(".bin.tmp")
    tmp_blob.write_bytes(b"".join(chunks))
    tmp_blob.replace(blob_path)
    tmp_man = manifest_path.with_suffix(".manifest.tmp")
    tmp_man.write_text("\n".join(lines) + "\n")
    tmp_man.replace(manifest_path)
    return manifest_path


def load_checkpoint(stem: str | Path) -> tuple[dict[str, torch.Tensor], dict[str, Any]]:
    manifest_path, blob_path = _paths(stem)
    if not manifest_path.exists() or not blob_path.exists():
        raise DataError(f"checkpoint {manifest_path.with_suffix('')} not found")
    lines = manifest_path.read_text().splitlines()
    if not lines or lines[0] != MAGIC:
        raise DataError(f"{manifest_path}: not a reco checkpoint manifest")
    blob = np.frombuffer(blob_path.read_bytes(), dtype="<f4")
    tensors: dict[str, torch.Tensor] = {}
    meta: dict[str, Any] = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        kind, rest = line.split(" ", 1)
        if kind == "meta":
            key, value = rest.split(" ", 1)
            meta[key] = json.loads(value)
        elif kind == "tensor":
            name, dtype, shape, offset, count = rest.split(" ")
            offset, count = int(offset), int(count)
            if offset + count > blob.size:
                raise DataError(f"{blob_path}: truncated blob for tensor {name}")
            dims = () if shape == "-" else tuple(int(s) for s in shape.split(","))
            arr = blob[offset : offset + count].astype(np.float32).reshape(dims)
            tensors[name] = torch.from_numpy(arr.copy()).to(getattr(torch, dtype))
        else:
            raise DataError(f"{manifest_path}: unknown manifest line {line!r}")
    return tensors, meta
