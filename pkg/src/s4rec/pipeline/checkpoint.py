"""Single-file checkpoints: JSON manifest followed by tensor blocks."""
from __future__ import annotations

import json
import os
import struct

from ..errors import DataError
from ..ndtensor import read_blocks, write_blocks

MAGIC = b"S4RCKPT1"


def save_checkpoint(path, manifest, arrays):
    tmp = f"{path}.tmp"
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        write_blocks(fh, arrays)
    os.replace(tmp, path)
    return path


def load_checkpoint(path):
    try:
        fh = open(path, "rb")
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    with fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        (n,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(n).decode("utf-8"))
        arrays = read_blocks(fh)
    return manifest, arrays
