"""Binary container for named float64 arrays plus a JSON header.

Layout (all integers little-endian)::

    offset 0   4 bytes   magic b"DPCK"
    offset 4   uint16    format version (currently 1)
    offset 6   uint16    reserved, 0
    offset 8   uint64    header length H in bytes
    offset 16  H bytes   UTF-8 JSON header, keys sorted
               padding   zero bytes up to the next multiple of 8
    data       float64   arrays back to back in C order

The header holds ``{"arrays": [{"name", "shape", "offset"}...], "meta": {...}}``
where ``offset`` counts float64 elements from the start of the data section.
Nothing time-dependent is written, so equal inputs give equal bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DPCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    offset = 0
    for name in arrays:
        a = np.asarray(arrays[name], dtype="<f8", order="C")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size
    header = json.dumps({"arrays": entries, "meta": meta or {}}, sort_keys=True, separators=(",", ":")).encode()
    pad = (-(16 + len(header))) % 8
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HHQ", VERSION, 0, len(header)))
        fh.write(header)
        fh.write(b"\0" * pad)
        for name in arrays:
            fh.write(np.asarray(arrays[name], dtype="<f8", order="C").tobytes())


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a dialpath container (bad magic)")
    version, _, hlen = struct.unpack("<HHQ", raw[4:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")
    header = json.loads(raw[16:16 + hlen].decode())
    start = 16 + hlen + ((-(16 + hlen)) % 8)
    data = np.frombuffer(raw, dtype="<f8", offset=start)
    arrays = {}
    for e in header["arrays"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        arrays[e["name"]] = data[e["offset"]:e["offset"] + n].reshape(tuple(e["shape"])).astype(np.float64)
    return arrays, header["meta"]
