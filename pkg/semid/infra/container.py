"""
"RSID" binary container and atomic file writes.

Layout (all integers little-endian):

    offset 0   magic   4 bytes  b"RSID"
    offset 4   version u32
    offset 8   rows    u32
    offset 12  cols    u32
    offset 16  payload rows * cols float32 LE, row-major
    ...        trailer UTF-8 JSON object up to end of file

Embedding matrices store N x D values; checkpoints store every parameter
tensor flattened into one column with a manifest in the trailer.
"""

from __future__ import annotations

import json
import os
import struct
import sys
import tempfile
from contextlib import contextmanager
from typing import Any, BinaryIO, Dict, Iterator, Tuple

import numpy as np

from semid.errors import FormatError

MAGIC = b"RSID"
VERSION = 1
HEADER = struct.Struct("<4sIII")
_U32_MAX = 2**32 - 1
_F32 = np.dtype("<f4")


@contextmanager
def atomic_write(path: str) -> Iterator[BinaryIO]:
    """
    Context manager that writes to a temporary file next to ``path``:
    - os.replace onto ``path`` on success
    - temporary file removed on error (``path`` left untouched)
    """
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            yield fh
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode(values: np.ndarray, trailer: Dict[str, Any]) -> bytes:
    """Serialises a 2-D array and its JSON trailer. Values are stored as float32."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError(f"container payload must be 2-D, got shape {arr.shape}")
    rows, cols = arr.shape
    if rows > _U32_MAX or cols > _U32_MAX:
        raise ValueError(f"shape {arr.shape} overflows the u32 header fields")
    payload = np.ascontiguousarray(arr, dtype=_F32)
    if not np.all(np.isfinite(payload)):
        raise ValueError("container payload has non-finite values")
    body = json.dumps(trailer, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    return HEADER.pack(MAGIC, VERSION, rows, cols) + payload.tobytes() + body.encode("utf-8")


def decode(data: bytes, path: str = "<bytes>") -> Tuple[np.ndarray, Dict[str, Any]]:
    """Parses a container; every failure is a FormatError naming the byte offset."""
    if len(data) < HEADER.size:
        raise FormatError(path, f"truncated header ({len(data)} of {HEADER.size} bytes)", offset=len(data))
    magic, version, rows, cols = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(path, f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(path, f"unsupported version {version}", offset=4)
    count = rows * cols
    nbytes = count * _F32.itemsize
    if nbytes > sys.maxsize:
        raise FormatError(path, f"rows*cols overflow ({rows}x{cols})", offset=8)
    if nbytes > len(data) - HEADER.size:
        raise FormatError(
            path,
            f"truncated payload: {rows}x{cols} floats need {nbytes} bytes, "
            f"{len(data) - HEADER.size} available",
            offset=len(data),
        )
    end = HEADER.size + nbytes
    values = np.frombuffer(data, dtype=_F32, count=count, offset=HEADER.size).reshape(rows, cols).copy()
    try:
        trailer = json.loads(data[end:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(path, f"bad JSON trailer: {exc}", offset=end) from exc
    if not isinstance(trailer, dict):
        raise FormatError(path, "JSON trailer must be an object", offset=end)
    return values, trailer


def write_container(path: str, values: np.ndarray, trailer: Dict[str, Any]) -> None:
    blob = encode(values, trailer)
    with atomic_write(path) as fh:
        fh.write(blob)


def read_container(path: str) -> Tuple[np.ndarray, Dict[str, Any]]:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError as exc:
        raise FormatError(path, "file not found") from exc
    return decode(data, path)
