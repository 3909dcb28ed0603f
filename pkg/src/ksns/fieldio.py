"""Snapshot files for scalar fields.

Binary layout (little endian)::

    b"KSNS1"
    nx, ny          int32
    h               float64
    mask            ny*nx bits, row-major, np.packbits order
    values          float64 per active cell, row-major

The CSV alternative has one row per active cell: ``i,j,x,y,value``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ksns.errors import ConfigError
from ksns.grid import NEUMANN, Grid, ScalarField

MAGIC = b"KSNS1"


def write_snapshot(path, f: ScalarField) -> Path:
    g = f.grid
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<iid", g.nx, g.ny, g.h))
        fh.write(np.packbits(g.mask.ravel()).tobytes())
        fh.write(np.ascontiguousarray(f.values[g.mask], dtype="<f8").tobytes())
    return path


def read_snapshot(path, bc: str = NEUMANN) -> ScalarField:
    """Read a snapshot back into a field on a grid anchored at the origin."""
    data = Path(path).read_bytes()
    if data[:5] != MAGIC:
        raise ConfigError(f"{path}: not a KSNS1 snapshot")
    nx, ny, h = struct.unpack_from("<iid", data, 5)
    off = 5 + struct.calcsize("<iid")
    nbytes = (nx * ny + 7) // 8
    mask = np.unpackbits(np.frombuffer(data, np.uint8, nbytes, off))[: nx * ny]
    mask = mask.reshape(ny, nx).astype(bool)
    off += nbytes
    vals = np.frombuffer(data, "<f8", int(mask.sum()), off)
    grid = Grid(nx * h, ny * h, nx, ny, mask)
    full = np.zeros((ny, nx))
    full[mask] = vals
    return ScalarField(grid, full, bc)


def write_csv(path, f: ScalarField) -> Path:
    g = f.grid
    j, i = np.nonzero(g.mask)
    table = np.column_stack([i, j, g.xc[i], g.yc[j], f.values[j, i]])
    path = Path(path)
    np.savetxt(path, table, delimiter=",", header="i,j,x,y,value", comments="",
               fmt=["%d", "%d", "%.17g", "%.17g", "%.17g"])
    return path
