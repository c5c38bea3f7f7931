"""Binary formats: ``.ten`` tensor archives and ``ZSCKPT1`` checkpoints.

``.ten`` layout: magic ``ZSTEN1``, u8 dtype code (0=f32, 1=f64), u8 rank,
rank x u32 little-endian extents, then the row-major little-endian payload.

Checkpoint layout: magic ``ZSCKPT1``, u32 entry count, then per entry a u16
name length, the UTF-8 name and the tensor in ``.ten`` layout.
"""
from __future__ import annotations

import io
import os
import struct
from typing import BinaryIO, Mapping

import numpy as np

TEN_MAGIC = b"ZSTEN1"
CKPT_MAGIC = b"ZSCKPT1"
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class FormatError(ValueError):
    """Raised when a file does not follow the expected binary layout."""


def _read_exact(f: BinaryIO, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"unexpected end of data (wanted {n} bytes, got {len(buf)})")
    return buf


def write_tensor(f: BinaryIO, array) -> None:
    a = np.asarray(array)
    if a.dtype not in _CODES:
        raise FormatError(f"unsupported dtype {a.dtype}; only float32/float64 are storable")
    if a.ndim > 255:
        raise FormatError("rank exceeds 255")
    f.write(TEN_MAGIC)
    f.write(struct.pack("<BB", _CODES[a.dtype], a.ndim))
    f.write(struct.pack(f"<{a.ndim}I", *a.shape))
    f.write(np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<")).tobytes())


def read_tensor(f: BinaryIO) -> np.ndarray:
    if _read_exact(f, len(TEN_MAGIC)) != TEN_MAGIC:
        raise FormatError("bad tensor magic")
    code, rank = struct.unpack("<BB", _read_exact(f, 2))
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank))
    dt = _DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64))
    data = np.frombuffer(_read_exact(f, count * dt.itemsize), dtype=dt)
    return data.reshape(shape).astype(dt.newbyteorder("="))


def save_ten(path: str | os.PathLike, array) -> None:
    with open(path, "wb") as f:
        write_tensor(f, array)


def load_ten(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        arr = read_tensor(f)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after tensor payload")
    return arr


def dumps_checkpoint(entries: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<I", len(entries)))
    for name, array in entries.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"parameter name too long: {name[:40]}...")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        write_tensor(buf, array)
    return buf.getvalue()


def loads_checkpoint(data: bytes) -> dict[str, np.ndarray]:
    f = io.BytesIO(data)
    if _read_exact(f, len(CKPT_MAGIC)) != CKPT_MAGIC:
        raise FormatError("bad checkpoint magic")
    (count,) = struct.unpack("<I", _read_exact(f, 4))
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", _read_exact(f, 2))
        name = _read_exact(f, n).decode("utf-8")
        if name in entries:
            raise FormatError(f"duplicate checkpoint entry {name!r}")
        entries[name] = read_tensor(f)
    if f.read(1):
        raise FormatError("trailing bytes after checkpoint entries")
    return entries


def save_checkpoint(path: str | os.PathLike, entries: Mapping[str, np.ndarray]) -> None:
    # write-then-rename keeps the previous checkpoint intact if we die mid-write
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as f:
        f.write(dumps_checkpoint(entries))
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return loads_checkpoint(f.read())
