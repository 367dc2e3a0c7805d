"""Flat binary snapshots with a JSON sidecar.

Layout (little-endian)::

    0   4s  magic "FLNS"
    4   4s  subtype "KINE" (kinetic f + fluid u) or "HYDR" (rho, m, u)
    8   i8  format version
    16  i8  d
    24  i8  nx
    32  i8  nxi (0 for hydro snapshots)
    40  f8  xi_max
    48  f8  time
    56      row-major float64 arrays, in the order listed in the sidecar
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .fields import DistributionField, FluidField, PhaseGrid
from .hydro import HydroState

MAGIC = b"FLNS"
VERSION = 1
_HEADER = struct.Struct("<4s4sqqqqdd")


class SnapshotError(ValueError):
    pass


def _arrays_for(obj):
    if isinstance(obj, tuple):
        f, u = obj
        return b"KINE", f.grid, f.time, [("f", f.values), ("u", u.velocity)]
    if isinstance(obj, HydroState):
        return b"HYDR", obj.grid, obj.time, [("rho", obj.rho), ("m", obj.m), ("u", obj.u.velocity)]
    raise TypeError("expected (DistributionField, FluidField) or HydroState")


def write_snapshot(path, obj) -> Path:
    """Write a snapshot and its ``.json`` sidecar; returns the binary path."""
    path = Path(path)
    sub, g, t, arrays = _arrays_for(obj)
    nxi = g.nxi if sub == b"KINE" else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, sub, VERSION, g.dim, g.nx, nxi, float(g.xi_max), float(t)))
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    side = {"magic": MAGIC.decode(), "subtype": sub.decode(), "version": VERSION, "d": g.dim,
            "nx": g.nx, "nxi": nxi, "xi_max": g.xi_max, "time": t,
            "arrays": [{"name": n, "shape": list(np.shape(a))} for n, a in arrays]}
    with open(path.with_suffix(path.suffix + ".json"), "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise SnapshotError("truncated header")
    magic, sub, version, d, nx, nxi, xi_max, t = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise SnapshotError(f"bad magic {magic!r}")
    if version != VERSION:
        raise SnapshotError(f"unsupported version {version}")
    return {"subtype": sub.decode(), "version": version, "d": d, "nx": nx, "nxi": nxi,
            "xi_max": xi_max, "time": t}


def read_snapshot(path):
    """Inverse of :func:`write_snapshot`."""
    h = read_header(path)
    d, nx = h["d"], h["nx"]
    data = np.fromfile(path, dtype="<f8", offset=_HEADER.size)
    space = (nx,) * d
    if h["subtype"] == "KINE":
        g = PhaseGrid(d, nx, h["nxi"], h["xi_max"])
        nf = int(np.prod(g.shape))
        nu = d * nx**d
        if data.size != nf + nu:
            raise SnapshotError("payload size does not match header")
        f = DistributionField(g, data[:nf].reshape(g.shape), h["time"])
        u = FluidField(g, data[nf:].reshape((d,) + space))
        return f, u
    if h["subtype"] == "HYDR":
        g = PhaseGrid(d, nx, 4, h["xi_max"])
        n = nx**d
        if data.size != n + 2 * d * n:
            raise SnapshotError("payload size does not match header")
        rho = data[:n].reshape(space)
        m = data[n:n + d * n].reshape((d,) + space)
        u = FluidField(g, data[n + d * n:].reshape((d,) + space))
        return HydroState(rho, m, u, h["time"])
    raise SnapshotError(f"unknown subtype {h['subtype']!r}")
