"""Versioned binary containers for features and models.

Layout of every container file:

    magic     4 bytes, ASCII
    version   uint32 little-endian
    hdr_len   uint64 little-endian
    header    hdr_len bytes of UTF-8 JSON: {"meta": {...}, "arrays": [...]}
    payload   raw little-endian array bytes, in header order

Array entries record name, dtype and shape so the payload can be mapped
back without guessing. Round-trips are bit-exact for float64/int64 data.
"""

from __future__ import annotations

import json
import struct

import numpy as np

FEATURE_MAGIC = b"FEAT"
MLP_MAGIC = b"ANBN"
GMM_MAGIC = b"GUBM"

FEATURE_VERSION = 1
MLP_VERSION = 1
GMM_VERSION = 1


class ContainerError(Exception):
    """Malformed or mismatched container file."""


class BadMagicError(ContainerError):
    pass


class VersionError(ContainerError):
    pass


def write_container(path, magic: bytes, version: int, meta: dict, arrays: dict) -> None:
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    entries = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps({"meta": meta, "arrays": entries}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", version))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_container(path, magic: bytes, version: int):
    """Read a container, checking magic and version. Returns (meta, arrays)."""
    with open(path, "rb") as fh:
        got_magic = fh.read(4)
        if got_magic != magic:
            raise BadMagicError(
                f"{path}: expected magic {magic!r}, found {got_magic!r}"
            )
        (got_version,) = struct.unpack("<I", fh.read(4))
        if got_version != version:
            raise VersionError(
                f"{path}: container version {got_version}, this build reads version {version}"
            )
        (hdr_len,) = struct.unpack("<Q", fh.read(8))
        try:
            header = json.loads(fh.read(hdr_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ContainerError(f"{path}: corrupt header ({exc})") from exc
        arrays = {}
        for entry in header["arrays"]:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise ContainerError(f"{path}: truncated payload for array {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
    return header["meta"], arrays
