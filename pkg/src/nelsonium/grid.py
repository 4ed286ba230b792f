"""Periodic uniform grids with spectral calculus.

Scalar fields are numpy arrays of shape ``(M,) * D``; vector fields carry a
leading component axis, shape ``(D,) + (M,) * D``.  Axis 0 is the slowest
(row-major), which is also the particle index for N-body configuration
space with one spatial dimension per particle.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

# complex128 nodes allowed on one grid before build_grid refuses
DEFAULT_MAX_NODES = 2**25


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on ``[-L/2, L/2)^D`` with ``M`` nodes per axis."""

    box_length: float
    points_per_axis: int
    total_dims: int

    @property
    def spacing(self) -> float:
        return self.box_length / self.points_per_axis

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.total_dims

    @property
    def size(self) -> int:
        return self.points_per_axis**self.total_dims

    @cached_property
    def nodes(self) -> np.ndarray:
        """One-dimensional node coordinates ``x_i = -L/2 + i dx``."""
        return -0.5 * self.box_length + self.spacing * np.arange(self.points_per_axis)

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers in FFT order (``k = 2 pi j / L``)."""
        return 2.0 * np.pi * np.fft.fftfreq(self.points_per_axis, d=self.spacing)

    def coordinate(self, axis: int) -> np.ndarray:
        """Node coordinates along ``axis``, shaped to broadcast over the grid."""
        shape = [1] * self.total_dims
        shape[axis] = self.points_per_axis
        return self.nodes.reshape(shape)

    def wavenumber(self, axis: int) -> np.ndarray:
        shape = [1] * self.total_dims
        shape[axis] = self.points_per_axis
        return self.wavenumbers.reshape(shape)

    def k_squared(self) -> np.ndarray:
        return sum(self.wavenumber(a) ** 2 for a in range(self.total_dims))

    def with_dims(self, dims: int) -> "Grid":
        return Grid(self.box_length, self.points_per_axis, dims)

    def wrap(self, x: np.ndarray) -> np.ndarray:
        """Map coordinates into ``[-L/2, L/2)``."""
        half = 0.5 * self.box_length
        return (np.asarray(x) + half) % self.box_length - half

    def min_image(self, r: np.ndarray) -> np.ndarray:
        return r - self.box_length * np.round(r / self.box_length)

    def check_field(self, f: np.ndarray, vector: bool = False) -> None:
        expected = ((self.total_dims,) if vector else ()) + self.shape
        if np.shape(f) != expected:
            raise GridError(f"field shape {np.shape(f)} does not match grid {expected}")


def build_grid(
    box_length: float,
    points_per_axis: int,
    total_dims: int,
    max_nodes: int = DEFAULT_MAX_NODES,
) -> Grid:
    """Validate and build a :class:`Grid`.

    Raises
    ------
    GridError
        If ``M`` is not a power of two (or smaller than 8), ``L <= 0``,
        ``D < 1`` or ``M**D`` exceeds ``max_nodes``.
    """
    M = int(points_per_axis)
    if M < 8 or M & (M - 1):
        raise GridError(f"points_per_axis must be a power of two >= 8, got {points_per_axis}")
    if not box_length > 0:
        raise GridError(f"box_length must be positive, got {box_length}")
    if int(total_dims) < 1:
        raise GridError(f"total_dims must be >= 1, got {total_dims}")
    nodes = M**int(total_dims)
    if nodes > max_nodes:
        raise GridError(
            f"grid {M}^{total_dims} = {nodes:,} nodes "
            f"({nodes * 16 / 2**20:,.0f} MiB per complex field) exceeds budget of {max_nodes:,} nodes"
        )
    return Grid(float(box_length), M, int(total_dims))


def spectral_derivative(grid: Grid, f: np.ndarray, orders: Sequence[int]) -> np.ndarray:
    """Mixed partial derivative with ``orders[a]`` derivatives along axis ``a``.

    Real input gives real output.  The Nyquist mode is dropped for odd total
    order so that odd derivatives of real fields stay real and antisymmetric.
    """
    if len(orders) != grid.total_dims:
        raise GridError(f"need {grid.total_dims} derivative orders, got {len(orders)}")
    axes = tuple(range(grid.total_dims))
    fhat = np.fft.fftn(f, axes=axes)
    for axis, order in enumerate(orders):
        if order == 0:
            continue
        ik = 1j * grid.wavenumber(axis)
        mult = ik**order
        if order % 2:
            mult = np.where(np.abs(grid.wavenumber(axis)) == np.pi / grid.spacing, 0.0, mult)
        fhat = fhat * mult
    out = np.fft.ifftn(fhat, axes=axes)
    if np.isrealobj(f):
        return out.real
    return out


def spectral_gradient(grid: Grid, f: np.ndarray, axis: int) -> np.ndarray:
    """First derivative of ``f`` along ``axis`` via the Fourier multiplier ``ik``."""
    if not 0 <= axis < grid.total_dims:
        raise GridError(f"axis {axis} out of range for D={grid.total_dims}")
    orders = [0] * grid.total_dims
    orders[axis] = 1
    return spectral_derivative(grid, f, orders)


def gradient(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Full gradient as a vector field of shape ``(D,) + grid.shape``."""
    return np.stack([spectral_gradient(grid, f, a) for a in range(grid.total_dims)])


def divergence(grid: Grid, vec: np.ndarray) -> np.ndarray:
    return sum(spectral_gradient(grid, vec[a], a) for a in range(grid.total_dims))


def periodic_convolution(grid: Grid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Periodic convolution ``(a * b)(x) = dx * sum_y a(x - y) b(y)``.

    ``a`` is read as a function of displacement: its node at coordinate
    ``-L/2 + m dx`` holds the value at displacement ``-L/2 + m dx``, so a
    kernel sampled on the nodes (e.g. ``V(|x|)``) can be passed directly.
    Only one-axis grids are supported.
    """
    if grid.total_dims != 1:
        raise GridError("periodic_convolution requires a one-axis grid")
    grid.check_field(a)
    grid.check_field(b)
    # node M/2 sits at displacement 0
    ahat = np.fft.fft(np.fft.ifftshift(a))
    out = np.fft.ifft(ahat * np.fft.fft(b)) * grid.spacing
    if np.isrealobj(a) and np.isrealobj(b):
        return out.real
    return out


def quadrature(grid: Grid, f: np.ndarray, axes: Sequence[int] | None = None):
    """Rectangle rule over ``axes`` (all axes when None).

    Returns a scalar when every axis is integrated, otherwise an array over
    the remaining axes in their original order.  Vector fields are not
    accepted here; integrate component-wise.
    """
    f = np.asarray(f)
    if f.size == 0:
        raise GridError("cannot integrate an empty field")
    grid.check_field(f)
    if axes is None:
        axes = tuple(range(grid.total_dims))
    axes = tuple(sorted(set(int(a) for a in axes)))
    for a in axes:
        if not 0 <= a < grid.total_dims:
            raise GridError(f"axis {a} out of range for D={grid.total_dims}")
    out = f.sum(axis=axes) * grid.spacing ** len(axes)
    if len(axes) == grid.total_dims:
        return out.item() if np.ndim(out) == 0 else out
    return out


def interpolate(grid: Grid, f: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Periodic multilinear interpolation of ``f`` at ``points``.

    Parameters
    ----------
    f : ndarray
        Scalar field ``grid.shape`` or vector field ``(C,) + grid.shape``.
    points : ndarray
        Shape ``(K, D)`` or a single ``(D,)`` point; wrapped into the box.

    Returns
    -------
    ndarray
        Shape ``(K,)`` for scalar fields, ``(K, C)`` for vector fields
        (leading ``K`` dropped for a single point).
    """
    f = np.asarray(f)
    D = grid.total_dims
    M = grid.points_per_axis
    vector = f.ndim == D + 1
    if f.shape[-D:] != grid.shape or f.ndim not in (D, D + 1):
        raise GridError(f"field shape {f.shape} incompatible with grid {grid.shape}")
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != D:
        raise GridError(f"points must have {D} coordinates, got {pts.shape[1]}")

    s = (grid.wrap(pts) + 0.5 * grid.box_length) / grid.spacing
    base = np.floor(s)
    frac = s - base
    base = base.astype(np.int64) % M

    flat = f.reshape((f.shape[0] if vector else 1, -1))
    strides = M ** np.arange(D - 1, -1, -1)
    result = np.zeros((pts.shape[0], flat.shape[0]))
    for corner in range(2**D):
        bits = [(corner >> (D - 1 - a)) & 1 for a in range(D)]
        idx = np.zeros(pts.shape[0], dtype=np.int64)
        weight = np.ones(pts.shape[0])
        for a, bit in enumerate(bits):
            idx += ((base[:, a] + bit) % M) * strides[a]
            weight *= frac[:, a] if bit else 1.0 - frac[:, a]
        result += weight[:, None] * flat[:, idx].T
    if np.isnan(result).any():
        raise FloatingPointError("NaN encountered while interpolating field")
    if not vector:
        result = result[:, 0]
    return result[0] if single else result
