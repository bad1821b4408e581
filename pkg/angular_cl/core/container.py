"""
Binary Container

Versioned single-file format for named numpy arrays plus JSON metadata.
Used by the task-sequence cache and by weight snapshots.

Layout:
    4 bytes   magic b"ACL1"
    4 bytes   format version (uint32, big-endian)
    8 bytes   header length (uint64, big-endian)
    header    UTF-8 JSON: kind, metadata, array table, payload SHA-256
    payload   raw little-endian array bytes, concatenated in table order

Round-trips are bit-exact. A payload whose hash does not match the header is
reported as a CacheIntegrityError.
"""

import hashlib
import json
import os
import struct
from typing import Any

import numpy as np

from ..errors import CacheIntegrityError

MAGIC = b"ACL1"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct(">4sIQ")


def _little_endian(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    if array.dtype.byteorder == ">":
        array = array.astype(array.dtype.newbyteorder("<"))
    return array


def write_container(
    path: str,
    arrays: dict[str, np.ndarray],
    metadata: dict[str, Any] | None = None,
    kind: str = "generic",
) -> str:
    """Write arrays + metadata atomically to `path`; returns the payload hash."""
    table = []
    chunks = []
    offset = 0
    digest = hashlib.sha256()
    for name, array in arrays.items():
        array = _little_endian(np.asarray(array))
        data = array.tobytes()
        table.append({
            "name": name,
            "dtype": array.dtype.str,
            "shape": list(array.shape),
            "offset": offset,
            "nbytes": len(data),
        })
        digest.update(data)
        chunks.append(data)
        offset += len(data)

    header = {
        "kind": kind,
        "metadata": metadata or {},
        "arrays": table,
        "payload_sha256": digest.hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "wb") as f:
        f.write(_PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for data in chunks:
            f.write(data)
    os.replace(tmp_path, path)
    return header["payload_sha256"]


def read_header(path: str) -> dict[str, Any]:
    """Read and validate only the header (no payload hashing)."""
    with open(path, "rb") as f:
        header, _ = _read_preamble_and_header(f, path)
    return header


def _read_preamble_and_header(f, path: str) -> tuple[dict[str, Any], int]:
    preamble = f.read(_PREAMBLE.size)
    if len(preamble) < _PREAMBLE.size:
        raise CacheIntegrityError(f"{path}: truncated container preamble")
    magic, version, header_len = _PREAMBLE.unpack(preamble)
    if magic != MAGIC:
        raise CacheIntegrityError(f"{path}: not a container file (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise CacheIntegrityError(f"{path}: unsupported container version {version}")
    header_bytes = f.read(header_len)
    if len(header_bytes) < header_len:
        raise CacheIntegrityError(f"{path}: truncated container header")
    try:
        header = json.loads(header_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CacheIntegrityError(f"{path}: unreadable container header ({e})") from e
    return header, _PREAMBLE.size + header_len


def read_container(path: str, kind: str | None = None) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Read a container, verifying magic, version, kind and payload hash."""
    with open(path, "rb") as f:
        header, _ = _read_preamble_and_header(f, path)
        payload = f.read()

    if kind is not None and header.get("kind") != kind:
        raise CacheIntegrityError(f"{path}: expected kind {kind!r}, found {header.get('kind')!r}")
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise CacheIntegrityError(f"{path}: payload checksum mismatch")

    arrays = {}
    for entry in header["arrays"]:
        start, end = entry["offset"], entry["offset"] + entry["nbytes"]
        if end > len(payload):
            raise CacheIntegrityError(f"{path}: array {entry['name']!r} exceeds payload")
        array = np.frombuffer(payload[start:end], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = array.reshape(entry["shape"]).copy()
    return arrays, header.get("metadata", {})
