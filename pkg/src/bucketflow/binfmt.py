"""Checksummed little-endian binary files for point clouds and flow fields.

Layout::

    offset  size  field
    0       4     magic b"BFLW"
    4       1     kind (1 = cloud, 2 = flow, 3 = ground-truth flow)
    5       1     format version (1)
    6       2     reserved, zero
    8       8     point count N (uint64)
    16      ...   payload
    end-4   4     CRC-32 of every preceding byte (uint32)

Payloads:

* cloud: float32[N, 3] xyz
* flow: float32[N, 3] vectors, uint8[N] valid
* ground-truth flow: float32[N, 3] vectors, uint8[N] valid, uint8[N] class index
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"BFLW"
VERSION = 1
KIND_CLOUD, KIND_FLOW, KIND_GTFLOW = 1, 2, 3
_KIND_NAMES = {KIND_CLOUD: "cloud", KIND_FLOW: "flow", KIND_GTFLOW: "ground-truth flow"}
_HEADER = struct.Struct("<4sBBHQ")
_CRC = struct.Struct("<I")
_F32 = np.dtype("<f4")


class LoadError(Exception):
    """Input data could not be loaded; names the offending file and frame."""

    def __init__(self, message: str, path: str | Path | None = None, frame: int | None = None):
        where = []
        if path is not None:
            where.append(f"file {path}")
        if frame is not None:
            where.append(f"frame {frame}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.path = path
        self.frame = frame


class FormatError(LoadError):
    """A binary file could not be decoded."""


class BadMagicError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


class CountMismatchError(FormatError):
    pass


def _payload_size(kind: int, n: int) -> int:
    return {KIND_CLOUD: 12 * n, KIND_FLOW: 13 * n, KIND_GTFLOW: 14 * n}[kind]


def encode(kind: int, columns: list[np.ndarray], n: int) -> bytes:
    body = _HEADER.pack(MAGIC, kind, VERSION, 0, n) + b"".join(c.tobytes() for c in columns)
    return body + _CRC.pack(zlib.crc32(body))


def decode(data: bytes, kind: int, path=None, frame=None, expected_count: int | None = None) -> tuple[int, memoryview]:
    if len(data) < _HEADER.size + _CRC.size:
        raise TruncatedFileError(f"file is {len(data)} bytes, shorter than the header", path, frame)
    magic, got_kind, version, _, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}", path, frame)
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}", path, frame)
    if got_kind != kind:
        raise FormatError(f"expected a {_KIND_NAMES[kind]} file, found kind {got_kind}", path, frame)
    size = _HEADER.size + _payload_size(kind, n) + _CRC.size
    if len(data) < size:
        raise TruncatedFileError(f"expected {size} bytes for {n} points, found {len(data)}", path, frame)
    if len(data) > size:
        raise FormatError(f"{len(data) - size} unexpected trailing bytes", path, frame)
    (crc,) = _CRC.unpack_from(data, size - _CRC.size)
    if zlib.crc32(memoryview(data)[: size - _CRC.size]) != crc:
        raise ChecksumError("checksum mismatch", path, frame)
    if expected_count is not None and n != expected_count:
        raise CountMismatchError(f"file holds {n} points but the cloud has {expected_count}", path, frame)
    return n, memoryview(data)[_HEADER.size : size - _CRC.size]


def cloud_bytes(points: np.ndarray) -> bytes:
    pts = np.ascontiguousarray(points, dtype=_F32).reshape(-1, 3)
    return encode(KIND_CLOUD, [pts], len(pts))


def flow_bytes(vectors: np.ndarray, valid: np.ndarray) -> bytes:
    vec = np.ascontiguousarray(vectors, dtype=_F32).reshape(-1, 3)
    return encode(KIND_FLOW, [vec, np.asarray(valid, dtype=np.uint8)], len(vec))


def gtflow_bytes(vectors: np.ndarray, valid: np.ndarray, class_index: np.ndarray) -> bytes:
    vec = np.ascontiguousarray(vectors, dtype=_F32).reshape(-1, 3)
    if np.max(class_index, initial=0) > 255:
        raise ValueError("class index does not fit in uint8")
    return encode(
        KIND_GTFLOW, [vec, np.asarray(valid, dtype=np.uint8), np.asarray(class_index, dtype=np.uint8)], len(vec)
    )


def _read(path: Path) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def read_cloud(path: str | Path, frame: int | None = None) -> np.ndarray:
    n, payload = decode(_read(Path(path)), KIND_CLOUD, path, frame)
    return np.frombuffer(payload, dtype=_F32, count=3 * n).reshape(n, 3).astype(np.float32)


def read_flow(path: str | Path, frame: int | None = None, expected_count: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    n, payload = decode(_read(Path(path)), KIND_FLOW, path, frame, expected_count)
    vec = np.frombuffer(payload, dtype=_F32, count=3 * n).reshape(n, 3).astype(np.float32)
    valid = np.frombuffer(payload, dtype=np.uint8, count=n, offset=12 * n).astype(bool)
    return vec, valid


def read_gtflow(
    path: str | Path, frame: int | None = None, expected_count: int | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, payload = decode(_read(Path(path)), KIND_GTFLOW, path, frame, expected_count)
    vec = np.frombuffer(payload, dtype=_F32, count=3 * n).reshape(n, 3).astype(np.float32)
    valid = np.frombuffer(payload, dtype=np.uint8, count=n, offset=12 * n).astype(bool)
    cls = np.frombuffer(payload, dtype=np.uint8, count=n, offset=13 * n).astype(np.int64)
    return vec, valid, cls


def write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(data)
