"""Self-describing binary container of named float32 tensors.

Layout: 8-byte magic, 4-byte little-endian header length, UTF-8 JSON header
(format version, free-form metadata, tensor directory with name/shape/byte
offset), then the raw little-endian float32 payloads back to back. The
payload bytes round-trip bit-exactly across platforms.
"""
from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"HVTC0001"
FORMAT_VERSION = 1


def save_tensors(path: str, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    directory = []
    payloads = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name]).astype("<f4", copy=False)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob = arr.tobytes()
        payloads.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"version": FORMAT_VERSION, "meta": meta or {}, "tensors": directory},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for blob in payloads:
            fh.write(blob)


def load_tensors(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a tensor container (bad magic {magic!r})")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported container version {header.get('version')}")
        payload = fh.read()
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        tensors[entry["name"]] = arr.reshape(shape).copy()
    return tensors, header["meta"]
