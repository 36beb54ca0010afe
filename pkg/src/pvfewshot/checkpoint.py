"""Deterministic checkpoint container.

Layout: an 8-byte magic, a big-endian uint64 header length, a canonical
JSON header (sorted keys, no whitespace), then the raw little-endian
float64 payload of every parameter, concatenated in name order. The
header carries the schema version, per-parameter shapes/offsets, and
arbitrary JSON metadata (config snapshot, architecture, history
digest). Saving the same state twice produces byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"PVFSCKPT"
VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, truncated, or version-incompatible checkpoint."""


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def config_hash(flat_config: dict) -> str:
    return hashlib.sha256(canonical_json(flat_config)).hexdigest()


def atomic_write(path: str | Path, payload: bytes) -> None:
    """Write via a sibling temp file and rename, never a partial file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def serialize_checkpoint(params: dict[str, np.ndarray], meta: dict) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape),
                        "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.size * 8
    header = canonical_json({"version": VERSION, "meta": meta, "params": entries})
    return MAGIC + struct.pack(">Q", len(header)) + header + b"".join(chunks)


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray], meta: dict) -> None:
    atomic_write(path, serialize_checkpoint(params, meta))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 8 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (header_len,) = struct.unpack(">Q", blob[len(MAGIC):len(MAGIC) + 8])
    header_end = len(MAGIC) + 8 + header_len
    if len(blob) < header_end:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[len(MAGIC) + 8:header_end])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    if header.get("version") != VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {header.get('version')!r}, expected {VERSION}")
    payload = blob[header_end:]
    params: dict[str, np.ndarray] = {}
    for entry in header["params"]:
        start, nbytes = entry["offset"], entry["count"] * 8
        if start + nbytes > len(payload):
            raise CheckpointError(f"{path}: truncated payload at parameter {entry['name']!r}")
        arr = np.frombuffer(payload[start:start + nbytes], dtype="<f8").reshape(entry["shape"])
        params[entry["name"]] = arr.copy()
    return params, header["meta"]


# ---------------------------------------------------------------------------
# model-level helpers


def save_model(path: str | Path, model, meta: dict | None = None) -> None:
    """Persist a forecaster: architecture metadata plus parameter payloads."""
    full_meta = {"arch": model.arch_meta()}
    if meta:
        full_meta.update(meta)
    save_checkpoint(path, model.state_arrays(), full_meta)


def load_model(path: str | Path):
    from .model import Forecaster

    params, meta = load_checkpoint(path)
    if "arch" not in meta:
        raise CheckpointError(f"{path}: checkpoint has no architecture metadata")
    model = Forecaster.from_arch_meta(meta["arch"])
    model.load_state(params)
    return model, meta
