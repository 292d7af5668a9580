"""Flat binary tensor container with a JSON header.

Layout: 4-byte magic ``EVD1``, uint32 little-endian header length, UTF-8 JSON
header, then the raw tensor bytes back to back.  The header holds a free-form
``meta`` dict plus a ``tensors`` list of ``{name, dtype, shape, offset,
nbytes}`` entries; offsets are relative to the start of the data section.
All scalars are little-endian and files round-trip bit-exactly, so byte
comparison of two containers is a valid equality check.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ContainerError

MAGIC = b"EVD1"


def save_container(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named arrays plus metadata to ``path``.

    Tensors are stored sorted by name so output bytes do not depend on dict
    insertion order.
    """
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        le = arr.dtype.newbyteorder("<")
        blob = arr.astype(le, copy=False).tobytes()
        entries.append(
            {
                "name": name,
                "dtype": le.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"meta": meta or {}, "tensors": entries}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header).to_bytes(4, "little"))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_container(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container back; returns (tensors, meta).

    Raises ContainerError on any structural damage (bad magic, truncation,
    header/payload size mismatch).
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise ContainerError(f"{path}: not a tensor container (bad magic)")
    header_len = int.from_bytes(raw[4:8], "little")
    if len(raw) < 8 + header_len:
        raise ContainerError(f"{path}: truncated header")
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: unreadable header: {exc}") from exc
    if not isinstance(header, dict) or "tensors" not in header:
        raise ContainerError(f"{path}: header missing tensor table")
    data = raw[8 + header_len :]
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        start, nbytes = entry["offset"], entry["nbytes"]
        expected = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dtype.itemsize
        if nbytes != expected:
            raise ContainerError(f"{path}: tensor {entry['name']!r} size mismatch in header")
        if start + nbytes > len(data):
            raise ContainerError(f"{path}: truncated data for tensor {entry['name']!r}")
        arr = np.frombuffer(data[start : start + nbytes], dtype=dtype).reshape(shape)
        tensors[entry["name"]] = arr.copy()
    return tensors, header.get("meta", {})
