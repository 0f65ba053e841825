"""Flat binary container for problem instances.

Layout::

    b"IHGI"                  4-byte magic
    uint32 little-endian     header length H
    H bytes                  UTF-8 JSON header: {"kind", "seed", "scalars",
                             "arrays": [{"name", "dtype", "shape"}, ...]}
    array payloads           in header order, C (row-major) order,
                             little-endian, no padding

dtypes are ``<f8`` (float64), ``<i8`` (int64) and ``|b1`` (bool).
"""

from __future__ import annotations

import json
import struct
from dataclasses import fields
from pathlib import Path

import numpy as np

from .hyperclean import HypercleanInstance
from .quadratic import QuadraticInstance

MAGIC = b"IHGI"
_KINDS = {"quadratic": QuadraticInstance, "hyperclean": HypercleanInstance}
_DTYPES = {"f": "<f8", "i": "<i8", "u": "<i8", "b": "|b1"}


def save_instance(path, inst) -> None:
    kind = next(k for k, cls in _KINDS.items() if isinstance(inst, cls))
    arrays, scalars = [], {}
    for fld in fields(inst):
        val = getattr(inst, fld.name)
        if isinstance(val, np.ndarray):
            arr = np.ascontiguousarray(val, dtype=_DTYPES[val.dtype.kind])
            arrays.append((fld.name, arr))
        else:
            scalars[fld.name] = val
    header = {
        "kind": kind,
        "seed": int(scalars.get("seed", 0)),
        "scalars": scalars,
        "arrays": [{"name": n, "dtype": a.dtype.str, "shape": list(a.shape)}
                   for n, a in arrays],
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(Path(path), "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        for _, a in arrays:
            fh.write(a.tobytes(order="C"))


def load_instance(path):
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not an instance file")
    (hlen,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8:8 + hlen].decode())
    off = 8 + hlen
    kwargs = dict(header["scalars"])
    for spec in header["arrays"]:
        dt = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        arr = np.frombuffer(data, dtype=dt, count=count, offset=off)
        kwargs[spec["name"]] = arr.reshape(spec["shape"]).copy()
        off += count * dt.itemsize
    return _KINDS[header["kind"]](**kwargs)
