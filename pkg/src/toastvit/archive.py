"""Bit-exact on-disk container for named float32 tensors.

File layout (all integers little-endian, independent of host byte order):

    bytes 0..5    magic ``TOAST1``
    bytes 6..9    uint32 manifest length M
    bytes 10..10+M  UTF-8 JSON manifest
    remainder     raw tensor payload, row-major float32, in manifest order

The manifest is ``{"format_version": 1, "entries": [...]}`` where each
entry is ``{"name": str, "dims": [int, ...], "byte_offset": int}`` with
offsets relative to the payload start, contiguous and strictly increasing.
An optional ``"metadata"`` object (e.g. conversion notes from an exporter)
is preserved but not interpreted.

Writes are atomic (temp file + rename); a write->read round trip is
byte-identical per tensor.
"""

from __future__ import annotations

import json
import math
import os
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .validation import check_finite

MAGIC = b"TOAST1"
FORMAT_VERSION = 1
_HEADER_LEN = len(MAGIC) + 4


class ArchiveError(ValueError):
    """Raised for malformed or inconsistent archive files."""


def write_archive(path, tensors: Sequence[tuple[str, np.ndarray]], metadata: dict | None = None) -> None:
    """Write named tensors to ``path``.

    ``tensors`` is an ordered sequence of ``(name, array)`` with unique
    names and finite float values; arrays are stored as little-endian
    float32 in iteration order.
    """
    entries = []
    chunks = []
    seen = set()
    offset = 0
    for name, value in tensors:
        if name in seen:
            raise ArchiveError(f"duplicate tensor name: {name!r}")
        seen.add(name)
        arr = np.ascontiguousarray(value, dtype="<f4")
        check_finite(arr, f"tensor {name!r}")
        entries.append({"name": name, "dims": list(arr.shape), "byte_offset": offset})
        chunks.append(arr.tobytes(order="C"))
        offset += arr.nbytes

    manifest = {"format_version": FORMAT_VERSION, "entries": entries}
    if metadata is not None:
        manifest["metadata"] = metadata
    manifest_bytes = json.dumps(manifest, separators=(",", ":")).encode("utf-8")

    blob = MAGIC + struct.pack("<I", len(manifest_bytes)) + manifest_bytes + b"".join(chunks)
    _atomic_write(path, blob)


def read_archive(path) -> list[tuple[str, np.ndarray]]:
    """Read all tensors from ``path`` in manifest order."""
    data = Path(path).read_bytes()
    manifest, payload = _split(data)
    out = []
    for entry in manifest["entries"]:
        dims = entry["dims"]
        count = math.prod(dims)
        start = entry["byte_offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        out.append((entry["name"], arr.reshape(dims).copy()))
    return out


def read_manifest(path) -> dict:
    """Parse and validate only the manifest of an archive."""
    manifest, _ = _split(Path(path).read_bytes())
    return manifest


def _split(data: bytes) -> tuple[dict, bytes]:
    if len(data) < _HEADER_LEN or data[: len(MAGIC)] != MAGIC:
        raise ArchiveError("not a TOAST archive")
    (manifest_len,) = struct.unpack("<I", data[len(MAGIC) : _HEADER_LEN])
    if _HEADER_LEN + manifest_len > len(data):
        raise ArchiveError("truncated")
    try:
        manifest = json.loads(data[_HEADER_LEN : _HEADER_LEN + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"bad manifest: {exc}") from exc

    payload = data[_HEADER_LEN + manifest_len :]
    _validate_manifest(manifest, len(payload))
    return manifest, payload


def _validate_manifest(manifest, payload_len: int) -> None:
    if not isinstance(manifest, dict) or not isinstance(manifest.get("entries"), list):
        raise ArchiveError("bad manifest: missing entries")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ArchiveError(f"bad manifest: unsupported format_version {manifest.get('format_version')!r}")
    names = set()
    expected_offset = 0
    for entry in manifest["entries"]:
        try:
            name, dims, offset = entry["name"], entry["dims"], entry["byte_offset"]
        except (TypeError, KeyError) as exc:
            raise ArchiveError("bad manifest: malformed entry") from exc
        if not isinstance(name, str) or name in names:
            raise ArchiveError(f"bad manifest: duplicate or invalid name {name!r}")
        names.add(name)
        if not isinstance(dims, list) or not all(isinstance(d, int) and d >= 0 for d in dims):
            raise ArchiveError(f"bad manifest: invalid dims for {name!r}")
        if offset != expected_offset:
            raise ArchiveError(f"bad manifest: non-contiguous offset for {name!r}")
        expected_offset += 4 * math.prod(dims)
    if payload_len < expected_offset:
        raise ArchiveError("truncated")
    if payload_len > expected_offset:
        raise ArchiveError(f"trailing data: {payload_len - expected_offset} unexpected bytes")


def _atomic_write(path, blob: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp.{os.getpid()}")
    tmp.write_bytes(blob)
    os.replace(tmp, path)
