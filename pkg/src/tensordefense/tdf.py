"""TDF1 binary tensor files and multi-tensor containers.

A TDF1 record is::

    bytes 0-3   magic b"TDF1"
    byte  4     dtype tag (1 = float64 little-endian)
    byte  5     order d
    4*d bytes   extents, uint32 little-endian
    payload     prod(extents) float64 little-endian values, row-major

A container (used for decomposition factors and model weights) is::

    bytes 0-3   magic b"TDFC"
    4 bytes     header length n, uint32 little-endian
    n bytes     UTF-8 JSON header; must hold "names": [...], one per record
    records     len(names) TDF1 records, back to back

For decompositions the header also carries ``method`` and ``ranks``; see
:mod:`tensordefense.decomp`.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import FormatError
from .tensor import as_tensor

MAGIC = b"TDF1"
CONTAINER_MAGIC = b"TDFC"
DTYPE_F64 = 1


def write_record(fh: BinaryIO, t: np.ndarray) -> None:
    t = as_tensor(t)
    if t.ndim > 255:
        raise FormatError("order exceeds 255")
    fh.write(MAGIC)
    fh.write(bytes([DTYPE_F64, t.ndim]))
    fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
    fh.write(t.astype("<f8", copy=False).tobytes(order="C"))


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated {what}: wanted {n} bytes, got {len(buf)}")
    return buf


def read_record(fh: BinaryIO) -> np.ndarray:
    magic = fh.read(4)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    dtype, order = _read_exact(fh, 2, "header")
    if dtype != DTYPE_F64:
        raise FormatError(f"unsupported dtype tag {dtype}")
    if order < 1:
        raise FormatError("order must be >= 1")
    shape = struct.unpack(f"<{order}I", _read_exact(fh, 4 * order, "extents"))
    if any(s < 1 for s in shape):
        raise FormatError(f"zero extent in shape {shape}")
    count = int(np.prod(shape, dtype=np.int64))
    payload = _read_exact(fh, 8 * count, "payload")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)


def save_tensor(path, t: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_record(fh, t)


def load_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fh = io.BytesIO(data)
    t = read_record(fh)
    if fh.tell() != len(data):
        raise FormatError(
            f"payload length mismatch: {len(data) - fh.tell()} trailing bytes"
        )
    return t


def save_container(path, header: dict, tensors: list[np.ndarray]) -> None:
    header = dict(header)
    if len(header.get("names", [])) != len(tensors):
        raise FormatError("header 'names' must list one name per tensor")
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for t in tensors:
            write_record(fh, t)


def load_container(path) -> tuple[dict, list[np.ndarray]]:
    data = Path(path).read_bytes()
    fh = io.BytesIO(data)
    if fh.read(4) != CONTAINER_MAGIC:
        raise FormatError("not a TDFC container")
    (n,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
    try:
        header = json.loads(_read_exact(fh, n, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad container header: {exc}") from exc
    tensors = [read_record(fh) for _ in header.get("names", [])]
    if fh.tell() != len(data):
        raise FormatError("trailing bytes after last record")
    return header, tensors
