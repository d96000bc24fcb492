"""Single-file binary container for datasets, plus small CSV helpers.

Byte layout (all integers little-endian, documented in README):

    offset 0   magic            8 bytes  b"IMULOC\\x00\\x01"
    offset 8   format version   uint32
    offset 12  header crc32     uint32   (zlib.crc32 of the header JSON bytes)
    offset 16  header length    uint64
    offset 24  header JSON      utf-8, ``{"arrays": [...], "meta": {...}}``
    ...        array payloads   raw little-endian bytes at the recorded offsets

Each entry of ``arrays`` records name, dtype code, shape, byte offset
relative to the start of the payload area (24 + header length) and byte
count.  Supported dtype codes: ``f4``, ``f8``, ``i8`` and ``c8`` (complex64,
stored as interleaved re/im float32 pairs).  Round-trips are bit-exact,
including NaN payloads.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import (
    ContainerChecksumError,
    ContainerFormatError,
    ContainerTruncatedError,
    ContainerVersionError,
    InputError,
)

MAGIC = b"IMULOC\x00\x01"
VERSION = 1

_DTYPES = {
    "f4": np.dtype("<f4"),
    "f8": np.dtype("<f8"),
    "i8": np.dtype("<i8"),
    "c8": np.dtype("<c8"),
}
_CODES = {v: k for k, v in _DTYPES.items()}


def write_container(path: str | Path, arrays: dict[str, np.ndarray],
                    metadata: dict | None = None) -> None:
    """Write named arrays plus a JSON metadata blob to ``path``."""
    entries = []
    blobs = []
    off = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        code = _CODES.get(arr.dtype.newbyteorder("<"))
        if code is None:
            raise InputError(f"unsupported dtype {arr.dtype} for array '{name}'")
        blob = arr.astype(_DTYPES[code], copy=False).tobytes()
        entries.append({"name": name, "dtype": code, "shape": list(arr.shape),
                        "offset": off, "nbytes": len(blob)})
        blobs.append(blob)
        off += len(blob)

    header = {"arrays": entries, "meta": metadata or {}}
    raw = json.dumps(header, sort_keys=True).encode()

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", zlib.crc32(raw)))
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def read_container(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container; returns (arrays, metadata). Validates magic,
    version, header checksum and total length before touching payloads."""
    data = Path(path).read_bytes()
    if len(data) < 24 or data[:8] != MAGIC:
        raise ContainerFormatError(f"{path}: not an imuloc container")
    version, crc, hlen = struct.unpack("<IIQ", data[8:24])
    if version != VERSION:
        raise ContainerVersionError(f"{path}: version {version}, expected {VERSION}")
    if len(data) < 24 + hlen:
        raise ContainerTruncatedError(f"{path}: truncated header")
    raw = data[24:24 + hlen]
    if zlib.crc32(raw) != crc:
        raise ContainerChecksumError(f"{path}: header checksum mismatch")
    header = json.loads(raw.decode())

    data_start = 24 + hlen
    arrays: dict[str, np.ndarray] = {}
    for e in header["arrays"]:
        start = data_start + e["offset"]
        if start + e["nbytes"] > len(data):
            raise ContainerTruncatedError(
                f"{path}: array '{e['name']}' extends past end of file")
        arr = np.frombuffer(data, dtype=_DTYPES[e["dtype"]],
                            count=e["nbytes"] // _DTYPES[e["dtype"]].itemsize,
                            offset=start)
        arrays[e["name"]] = arr.reshape(e["shape"]).copy()
    return arrays, header["meta"]


def write_csv(path: str | Path, columns: dict[str, np.ndarray | list]) -> None:
    """Write columns to CSV with shortest round-trip float formatting."""
    names = list(columns)
    cols = [np.asarray(columns[n]) for n in names]
    nrows = len(cols[0]) if cols else 0
    with open(path, "w") as fh:
        fh.write(",".join(names) + "\n")
        for i in range(nrows):
            cells = []
            for c in cols:
                v = c[i]
                if isinstance(v, (np.floating, float)):
                    cells.append(repr(float(v)))
                elif isinstance(v, (np.integer, int)):
                    cells.append(str(int(v)))
                else:
                    cells.append(str(v))
            fh.write(",".join(cells) + "\n")


def read_csv(path: str | Path) -> dict[str, list[str]]:
    """Read a CSV written by :func:`write_csv` (no quoting/escaping)."""
    lines = Path(path).read_text().splitlines()
    names = lines[0].split(",")
    out: dict[str, list[str]] = {n: [] for n in names}
    for line in lines[1:]:
        for n, cell in zip(names, line.split(",")):
            out[n].append(cell)
    return out
