"""Named-tensor binary container.

Layout: 8-byte magic ``PHLCKPT1``, little-endian uint64 header length, UTF-8
JSON header, then raw little-endian IEEE-754 payloads in header order. The
header maps each tensor name to shape/dtype/offset (offsets are relative to
the payload start) and carries a free-form ``meta`` object. Writing is fully
deterministic, so save -> load -> save round-trips byte-identically.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"PHLCKPT1"

_DTYPES = {"f8": "<f8", "f4": "<f4", "i8": "<i8"}


class TensorFileError(ValueError):
    pass


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = {}
    offset = 0
    blobs = []
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        if arr.dtype == np.float64:
            code = "f8"
        elif arr.dtype == np.float32:
            code = "f4"
        elif arr.dtype == np.int64:
            code = "i8"
        else:
            raise TensorFileError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        blob = np.ascontiguousarray(arr).astype(_DTYPES[code]).tobytes()
        entries[name] = {"shape": list(arr.shape), "dtype": code, "offset": offset}
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"tensors": entries, "meta": meta or {}},
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise TensorFileError(f"{path}: bad magic {magic!r}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        payload = fh.read()
    tensors = {}
    for name, entry in header["tensors"].items():
        dtype = np.dtype(_DTYPES[entry["dtype"]])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + count * dtype.itemsize
        if end > len(payload):
            raise TensorFileError(f"{path}: truncated payload for tensor {name!r}")
        tensors[name] = np.frombuffer(payload[start:end], dtype=dtype).reshape(shape).copy()
    return tensors, header["meta"]
