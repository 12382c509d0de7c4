"""Binary checkpoint format for named arrays.

Layout (all integers little-endian)::

    b"HDRF"  u32 version
    u32 meta_len   meta_len bytes of UTF-8 "key = value" lines
    u32 count
    count x { u16 name_len, name (UTF-8), u8 dtype (1=f32, 2=f64), u8 ndim,
              ndim x u32 dims, raw little-endian payload }

Entries are written in the order given, so save -> load -> save reproduces
the same bytes.
"""

from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np

MAGIC = b"HDRF"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


class CheckpointError(ValueError):
    pass


def _encode_meta(meta: Mapping[str, object] | None) -> bytes:
    if not meta:
        return b""
    lines = []
    for key, value in meta.items():
        if "\n" in str(key) or "\n" in str(value) or "=" in str(key):
            raise CheckpointError(f"metadata entry {key!r} cannot be encoded")
        lines.append(f"{key} = {value}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _decode_meta(raw: bytes) -> dict[str, str]:
    meta = {}
    for line in raw.decode("utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    return meta


def dumps(arrays: Mapping[str, np.ndarray], meta: Mapping[str, object] | None = None) -> bytes:
    meta_bytes = _encode_meta(meta)
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(meta_bytes)), meta_bytes]
    parts.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


def loads(
    raw: bytes, expected: Mapping[str, tuple[int, ...]] | None = None
) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"truncated checkpoint at byte {pos}")
        chunk = raw[pos : pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack("<I", take(4))
    meta = _decode_meta(take(meta_len))
    (count,) = struct.unpack("<I", take(4))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2))
        if code not in _DTYPES:
            raise CheckpointError(f"{name}: unknown dtype code {code}")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        dtype = _DTYPES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arrays[name] = np.frombuffer(take(size), dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    if pos != len(raw):
        raise CheckpointError(f"{len(raw) - pos} trailing bytes after last entry")
    if expected is not None:
        missing = [k for k in expected if k not in arrays]
        extra = [k for k in arrays if k not in expected]
        if missing or extra:
            raise CheckpointError(f"checkpoint entries do not match model: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            if tuple(arrays[name].shape) != tuple(shape):
                raise CheckpointError(f"{name}: shape {arrays[name].shape} != expected {tuple(shape)}")
    return arrays, meta


def save(path: str | os.PathLike, arrays: Mapping[str, np.ndarray], meta: Mapping[str, object] | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(arrays, meta))


def load(path: str | os.PathLike, expected: Mapping[str, tuple[int, ...]] | None = None):
    with open(path, "rb") as fh:
        return loads(fh.read(), expected)
