"""Checkpoint container: structured-text header plus raw little-endian arrays.

Layout of a ``.ckpt`` file:

    MELVIT-CKPT 1\n
    <header byte count>\n
    <JSON header>
    <raw data section>

The header lists, per entry, name / shape / dtype / byte offset (relative to
the start of the data section), plus an optional free-form ``meta`` mapping.
Arrays are stored little-endian in header order; round-trips are bit-exact.
Used for model checkpoints and per-sample spectrogram caches.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"MELVIT-CKPT 1\n"

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None):
    """Write named float arrays (and optional JSON-able metadata) to ``path``."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype == np.float32:
            code = "<f4"
        elif arr.dtype == np.float64:
            code = "<f8"
        else:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for entry {name!r}")
        raw = np.ascontiguousarray(arr).astype(code, copy=False).tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": code,
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"entries": entries, "meta": meta or {}}).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(b"%d\n" % len(header))
        f.write(header)
        for raw in blobs:
            f.write(raw)


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container written by :func:`save_arrays`; returns (arrays, meta)."""
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint container (bad magic)")
    rest = raw[len(MAGIC) :]
    nl = rest.index(b"\n")
    header_len = int(rest[:nl])
    header_start = nl + 1
    header = json.loads(rest[header_start : header_start + header_len])
    data = rest[header_start + header_len :]
    arrays: dict[str, np.ndarray] = {}
    for e in header["entries"]:
        dt = _DTYPES.get(e["dtype"])
        if dt is None:
            raise CheckpointError(f"{path}: unknown dtype {e['dtype']!r}")
        start, n = e["offset"], e["nbytes"]
        if start + n > len(data):
            raise CheckpointError(f"{path}: truncated data section at entry {e['name']!r}")
        arr = np.frombuffer(data[start : start + n], dtype=dt).reshape(e["shape"])
        arrays[e["name"]] = arr.copy()
    return arrays, header.get("meta", {})
