"""Minimal binary checkpoint format.

Layout (little-endian): magic "HSGT", u32 format version, u32 parameter
count, then per parameter: u32 name length, UTF-8 name, u32 rank, u32
extents, raw float32 values. Round-trips float32 models bit-exactly;
64-bit models (gradient-check mode) are not meant to be checkpointed.
"""

from __future__ import annotations

import struct

import numpy as np

from .image import DataError

MAGIC = b"HSGT"
VERSION = 1


def save_checkpoint(path, state: dict[str, np.ndarray]):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(state)))
        for name, arr in state.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    offset = 4
    version, count = struct.unpack_from("<II", blob, offset)
    offset += 8
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    state: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(shape)
        offset += 4 * n
        state[name] = arr.copy()
    if offset != len(blob):
        raise DataError(f"{path}: trailing bytes after last parameter")
    return state
