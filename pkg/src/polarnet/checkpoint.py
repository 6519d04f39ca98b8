"""Binary checkpoint container.

Layout: the magic string "PTNCKPT1", then one record per named array:

    u64  name length (little endian)
    ...  UTF-8 name
    u64  rank
    u64  extents[rank]
    f32  data (little endian IEEE-754, C order)
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"PTNCKPT1"

__all__ = ["save_checkpoint", "load_checkpoint", "MAGIC", "CheckpointError"]


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict):
    with open(path, "wb") as f:
        f.write(MAGIC)
        for name, arr in arrays.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            enc = name.encode("utf-8")
            f.write(struct.pack("<Q", len(enc)))
            f.write(enc)
            f.write(struct.pack("<Q", data.ndim))
            f.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            f.write(data.tobytes())


def load_checkpoint(path) -> dict:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic in {path}")
    off = len(MAGIC)
    out = {}
    total = len(blob)

    def take(n, what):
        nonlocal off
        if off + n > total:
            raise CheckpointError(f"truncated checkpoint while reading {what} "
                                  f"at byte {off}")
        chunk = blob[off:off + n]
        off += n
        return chunk

    while off < total:
        (name_len,) = struct.unpack("<Q", take(8, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<Q", take(8, "rank"))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank, "extents"))
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(take(4 * count, f"data of {name}"), dtype="<f4")
        out[name] = data.reshape(shape).copy()
    return out
