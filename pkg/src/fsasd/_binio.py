"""Shared binary container used by model and covariance files.

Layout (little-endian)::

    magic        4 bytes
    version      u8, then 3 reserved zero bytes
    meta_len     u32
    meta         meta_len bytes of UTF-8 JSON; ``meta["arrays"]`` lists
                 [name, shape] for each payload array in order
    payload      float64 values of every array, row-major, concatenated
    crc32        u32 over everything above
"""
from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .errors import CorruptFile, IoFailure, VersionMismatch

_HEAD = struct.Struct("<4sB3xI")


def write_container(path, magic: bytes, version: int, meta: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    meta = dict(meta, arrays=[[name, list(np.shape(a))] for name, a in arrays])
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    parts = [_HEAD.pack(magic, version, len(meta_bytes)), meta_bytes]
    parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays]
    blob = b"".join(parts)
    try:
        with open(path, "wb") as fh:
            fh.write(blob + struct.pack("<I", zlib.crc32(blob)))
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from None


def read_container(path, magic: bytes, version: int) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        blob = open(path, "rb").read()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from None
    if len(blob) < _HEAD.size + 4:
        raise CorruptFile(f"{path}: truncated header")
    got_magic, got_version, meta_len = _HEAD.unpack_from(blob)
    if got_magic != magic:
        raise CorruptFile(f"{path}: bad magic {got_magic!r}")
    if got_version != version:
        raise VersionMismatch(f"{path}: format version {got_version}, expected {version}")
    body, crc = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if len(body) < _HEAD.size + meta_len:
        raise CorruptFile(f"{path}: truncated metadata")
    try:
        meta = json.loads(body[_HEAD.size:_HEAD.size + meta_len])
        specs = [(name, tuple(shape)) for name, shape in meta["arrays"]]
    except (ValueError, KeyError, TypeError):
        raise CorruptFile(f"{path}: unreadable metadata") from None
    offset = _HEAD.size + meta_len
    need = offset + 8 * sum(int(np.prod(s)) for _, s in specs)
    if len(body) != need:
        raise CorruptFile(f"{path}: expected {need + 4} bytes, found {len(blob)}")
    if zlib.crc32(body) != crc:
        raise CorruptFile(f"{path}: checksum mismatch")
    arrays = {}
    for name, shape in specs:
        n = int(np.prod(shape))
        arrays[name] = np.frombuffer(body, dtype="<f8", count=n, offset=offset).reshape(shape).copy()
        offset += 8 * n
    return meta, arrays
