"""NBF1 binary field files.

Layout (little-endian): ``b"NBF1"``, u16 version (1), u16 kind
(0 real, 1 complex, 2 vector), u32 component count, u32 reserved, then
u32 D, u32 M, f64 L, then the f64 payload in row-major order with complex
values stored as interleaved (re, im) pairs and vector components
outermost.
"""

from __future__ import annotations

import struct

import numpy as np

from .grid import Grid

_HEADER = struct.Struct("<4sHHII")
_GRID = struct.Struct("<IId")
KIND_REAL, KIND_COMPLEX, KIND_VECTOR = 0, 1, 2


def write_nbf1(path, grid: Grid, values: np.ndarray) -> None:
    values = np.asarray(values)
    if np.iscomplexobj(values):
        grid.check_field(values)
        kind, comps = KIND_COMPLEX, 1
        payload = np.stack([values.real, values.imag], axis=-1)
    elif values.shape == grid.shape:
        kind, comps, payload = KIND_REAL, 1, values
    else:
        grid.check_field(values, vector=True)
        kind, comps, payload = KIND_VECTOR, values.shape[0], values
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(b"NBF1", 1, kind, comps, 0))
        fh.write(_GRID.pack(grid.total_dims, grid.points_per_axis, grid.box_length))
        fh.write(np.ascontiguousarray(payload, dtype="<f8").tobytes())


def read_nbf1(path) -> tuple[Grid, np.ndarray]:
    with open(path, "rb") as fh:
        magic, version, kind, comps, _ = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != b"NBF1" or version != 1:
            raise ValueError(f"not an NBF1 v1 file: {magic!r} v{version}")
        D, M, L = _GRID.unpack(fh.read(_GRID.size))
        data = np.frombuffer(fh.read(), dtype="<f8")
    grid = Grid(L, M, D)
    if kind == KIND_REAL:
        shape = grid.shape
    elif kind == KIND_COMPLEX:
        shape = grid.shape + (2,)
    elif kind == KIND_VECTOR:
        shape = (comps,) + grid.shape
    else:
        raise ValueError(f"unknown NBF1 field kind {kind}")
    if data.size != int(np.prod(shape)):
        raise ValueError(f"payload has {data.size} values, header promises {int(np.prod(shape))}")
    data = data.reshape(shape)
    if kind == KIND_COMPLEX:
        data = data[..., 0] + 1j * data[..., 1]
    return grid, data.copy()
