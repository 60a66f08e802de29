"""Checkpoint file: magic, uint64 header length, JSON header, then raw
little-endian buffers in header order."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import DataIntegrityError

MAGIC = b"IKRNCKPT"
FORMAT = "ikrnet-checkpoint/1"


def save_arrays(path: str | Path, arrays: list[tuple[str, str, np.ndarray]],
                config_hash: str, extra: dict | None = None) -> None:
    """``arrays`` holds ``(name, kind, array)`` with kind 'param' or 'buffer'."""
    tensors = []
    blobs = []
    for name, kind, arr in arrays:
        le = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        tensors.append({"name": name, "kind": kind, "shape": list(arr.shape), "dtype": le.dtype.str})
        blobs.append(le.tobytes())
    header = {"format": FORMAT, "config_hash": config_hash, "tensors": tensors, "extra": extra or {}}
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for b in blobs:
            fh.write(b)


def load_arrays(path: str | Path) -> tuple[dict, list[tuple[str, str, np.ndarray]]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise DataIntegrityError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16:16 + n])
    except json.JSONDecodeError as exc:
        raise DataIntegrityError(f"{path}: corrupt header") from exc
    if header.get("format") != FORMAT:
        raise DataIntegrityError(f"{path}: unsupported format {header.get('format')!r}")
    pos = 16 + n
    out = []
    for t in header["tensors"]:
        dt = np.dtype(t["dtype"])
        count = int(np.prod(t["shape"])) if t["shape"] else 1
        nbytes = count * dt.itemsize
        if pos + nbytes > len(data):
            raise DataIntegrityError(f"{path}: truncated buffer for {t['name']}")
        arr = np.frombuffer(data, dtype=dt, count=count, offset=pos).reshape(t["shape"])
        out.append((t["name"], t["kind"], arr.astype(dt.newbyteorder("=")).copy()))
        pos += nbytes
    if pos != len(data):
        raise DataIntegrityError(f"{path}: {len(data) - pos} trailing bytes")
    return header, out
