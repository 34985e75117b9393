"""Versioned binary container holding named float32 arrays.

All persistent artifacts (checkpoints, datasets, volumes) share one format:
magic ``AAIM``, a u32 format version, then a count-prefixed list of
(name, shape, raw little-endian float32 payload) sections. Text payloads
(manifests, config echoes) are stored as arrays of UTF-8 byte values so the
container stays single-typed.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"AAIM"
VERSION = 1


class ContainerError(ValueError):
    pass


def write_container(path: str | Path, sections: dict[str, np.ndarray]) -> None:
    """Write ``sections`` (name -> array, any float-castable dtype) to ``path``."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    blob += struct.pack("<I", len(sections))
    for name, arr in sections.items():
        arr = np.asarray(arr, dtype="<f4")
        if arr.ndim:
            arr = np.ascontiguousarray(arr)
        name_b = name.encode("utf-8")
        blob += struct.pack("<I", len(name_b))
        blob += name_b
        blob += struct.pack("<I", arr.ndim)
        for extent in arr.shape:
            blob += struct.pack("<I", extent)
        blob += arr.tobytes()
    Path(path).write_bytes(bytes(blob))


def read_container(path: str | Path) -> dict[str, np.ndarray]:
    """Read all sections; validates magic, version, and total length."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise ContainerError(f"{path}: bad magic (not an AAIM container)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported container version {version}")
    (count,) = struct.unpack_from("<I", raw, 8)
    off = 12
    sections: dict[str, np.ndarray] = {}
    for _ in range(count):
        if off + 4 > len(raw):
            raise ContainerError(f"{path}: truncated section header")
        (name_len,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off : off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<I", raw, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        n = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        nbytes = 4 * n
        if off + nbytes > len(raw):
            raise ContainerError(f"{path}: section {name!r} payload truncated")
        arr = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(shape)
        sections[name] = arr.copy()
        off += nbytes
    if off != len(raw):
        raise ContainerError(f"{path}: {len(raw) - off} trailing bytes after last section")
    return sections


def text_to_array(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def array_to_text(arr: np.ndarray) -> str:
    return np.rint(np.asarray(arr)).astype(np.uint8).tobytes().decode("utf-8")


def json_to_array(obj) -> np.ndarray:
    return text_to_array(json.dumps(obj, sort_keys=True))


def array_to_json(arr: np.ndarray):
    return json.loads(array_to_text(arr))
