"""Tensor block serialisation: name, dtype tag, shape, raw little-endian payload."""
from __future__ import annotations

import struct

import numpy as np

_TAGS = {"f4": "<f4", "f8": "<f8", "i4": "<i4", "i8": "<i8", "u1": "|u1"}
_TAG_OF = {np.dtype(v).str: k for k, v in _TAGS.items()}


def write_blocks(fh, arrays):
    fh.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        tag = _TAG_OF.get(_canon(arr.dtype).str)
        if tag is None:
            raise TypeError(f"unsupported dtype {arr.dtype} for block {name!r}")
        raw_name = name.encode("utf-8")
        fh.write(struct.pack("<H", len(raw_name)))
        fh.write(raw_name)
        fh.write(tag.encode("ascii"))
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype=_TAGS[tag]).tobytes())


def _canon(dtype):
    return np.dtype(dtype).newbyteorder("<")


def read_blocks(fh):
    (count,) = struct.unpack("<I", fh.read(4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", fh.read(2))
        name = fh.read(nlen).decode("utf-8")
        tag = fh.read(2).decode("ascii")
        (ndim,) = struct.unpack("<B", fh.read(1))
        shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
        dtype = np.dtype(_TAGS[tag])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        payload = fh.read(nbytes)
        if len(payload) != nbytes:
            raise EOFError(f"truncated block {name!r}")
        out[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    return out
