"""Portable binary container for grid images (masks, PSFs, frames).

Layout: magic bytes b"CEO1", two little-endian uint32 dimensions
(rows, cols), then row-major little-endian float32 samples. A sidecar
plain-text file at ``<path>.meta`` carries units and configuration as
``key=value`` lines; values are stored with repr-round-trippable
formatting but read back as strings (callers coerce).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"CEO1"
_HEADER = struct.Struct("<4sII")


def write_grid(path, array, meta: dict | None = None) -> None:
    """Write a 2-D array as a CEO1 file, plus optional sidecar metadata."""
    arr = np.asarray(array)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"CEO1 stores 2-D grids, got shape {arr.shape}")
    path = Path(path)
    data = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, arr.shape[0], arr.shape[1]))
        fh.write(data.tobytes())
    if meta is not None:
        write_meta(path.with_name(path.name + ".meta"), meta)


def read_grid(path, with_meta: bool = False):
    """Read a CEO1 file. Returns the array, or (array, meta) if asked."""
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise ValueError(f"{path}: truncated CEO1 header")
        magic, rows, cols = _HEADER.unpack(header)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        payload = fh.read(rows * cols * 4)
    if len(payload) != rows * cols * 4:
        raise ValueError(f"{path}: truncated CEO1 payload")
    arr = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float64)
    if not with_meta:
        return arr
    meta_path = path.with_name(path.name + ".meta")
    meta = read_meta(meta_path) if meta_path.exists() else {}
    return arr, meta


def write_meta(path, meta: dict) -> None:
    lines = []
    for key, value in meta.items():
        key = str(key).strip()
        if "=" in key or "\n" in key:
            raise ValueError(f"invalid metadata key {key!r}")
        lines.append(f"{key}={value}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_meta(path) -> dict:
    meta = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    return meta


def config_meta(cfg, **extra) -> dict:
    """Sidecar metadata block for a grid produced under cfg."""
    meta = {"units": extra.pop("units", "dimensionless")}
    meta.update(cfg.to_dict())
    meta.update(extra)
    return meta
