"""Named-tensor container: little-endian binary with per-tensor CRC.

Layout: magic, u32 tensor count, then per tensor (sorted by name for
byte-stable files): u16 name length, name bytes, u8 dtype code, u8 ndim,
u32 dims, u32 crc32 of the payload, u64 payload length, payload.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"GTLABCK1"

_DTYPES = {0: "<f4", 1: "<f8", 2: "<i8"}
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


class CheckpointError(IOError):
    pass


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype not in _DTYPE_CODES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        payload = arr.tobytes()
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(struct.pack("<IQ", zlib.crc32(payload), len(payload)))
        chunks.append(payload)
    Path(path).write_bytes(b"".join(chunks))


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic (not a checkpoint or wrong version)")
    off = len(MAGIC)
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        dtype_code, ndim = struct.unpack_from("<BB", blob, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        crc, nbytes = struct.unpack_from("<IQ", blob, off)
        off += 12
        payload = blob[off : off + nbytes]
        off += nbytes
        if zlib.crc32(payload) != crc:
            raise CheckpointError(f"{path}: CRC mismatch for tensor {name!r}")
        out[name] = np.frombuffer(payload, dtype=_DTYPES[dtype_code]).reshape(shape).copy()
    if off != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after last tensor")
    return out


def tensor_checksums(tensors: dict[str, np.ndarray]) -> dict[str, int]:
    return {name: zlib.crc32(np.ascontiguousarray(arr).tobytes()) for name, arr in sorted(tensors.items())}
