"""Fixed battery of smooth test functions for weak-form residuals.

Every report that uses the battery records :data:`PROBE_BATTERY_ID` so
numbers stay comparable across runs.  Probes are defined analytically and
can be sampled on a grid or evaluated at scattered points.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .grid import Grid

PROBE_BATTERY_ID = "PB1"
N_BUMPS = 8
N_FOURIER = 4

# a probe maps per-axis coordinate arrays to (phi, [d phi / d x_a for each axis])
ProbeFn = Callable[[Sequence[np.ndarray]], tuple[np.ndarray, list[np.ndarray]]]


def _bump_centres(L: float, D: int) -> np.ndarray:
    """Deterministic centres spread over ``[-0.35 L, 0.35 L]`` on every axis."""
    base = np.linspace(-0.35 * L, 0.35 * L, N_BUMPS)
    # stagger the axes so bumps do not all sit on the diagonal
    return np.stack([np.roll(base, 3 * a) for a in range(D)], axis=1)


def _bump(centre, width) -> ProbeFn:
    def fn(xs):
        phi = 1.0
        for a, x in enumerate(xs):
            phi = phi * np.exp(-0.5 * ((x - centre[a]) / width) ** 2)
        return phi, [-(x - centre[a]) / width**2 * phi for a, x in enumerate(xs)]
    return fn


def _fourier(mult: float, odd: bool) -> ProbeFn:
    def fn(xs):
        z = mult * xs[0]
        phi = np.sin(z) if odd else np.cos(z)
        d0 = mult * (np.cos(z) if odd else -np.sin(z))
        return phi, [d0] + [0.0 * x for x in xs[1:]]
    return fn


def _windowed_poly(power: int, width: float) -> ProbeFn:
    def fn(xs):
        w = 1.0
        for x in xs:
            w = w * np.exp(-0.5 * (x / width) ** 2)
        poly = xs[0] ** power
        grads = [-(x / width**2) * poly * w for x in xs]
        grads[0] = grads[0] + power * xs[0] ** (power - 1) * w
        return poly * w, grads
    return fn


def battery(box_length: float, dims: int) -> list[tuple[str, ProbeFn]]:
    """Named analytic probes for a box of side ``box_length`` in ``dims`` dimensions.

    8 tensorized Gaussian bumps of width ``L/16``, the 4 lowest Fourier
    modes along axis 0 and ``x_0 w``, ``x_0^2 w`` with a Gaussian window of
    width ``L/8``.
    """
    L = box_length
    out = [(f"bump{i}", _bump(c, L / 16)) for i, c in enumerate(_bump_centres(L, dims))]
    k = 2.0 * np.pi / L
    for m in range(N_FOURIER):
        out.append((f"fourier{m}", _fourier(k * (1 + m // 2), odd=bool(m % 2))))
    out += [(f"poly{p}", _windowed_poly(p, L / 8)) for p in (1, 2)]
    return out


def probe_battery(grid: Grid) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """``(name, phi, grad phi)`` sampled on ``grid``; gradients are analytic."""
    D = grid.total_dims
    xs = [grid.coordinate(a) for a in range(D)]
    ones = np.ones(grid.shape)
    out = []
    for name, fn in battery(grid.box_length, D):
        phi, grads = fn(xs)
        out.append((name, phi * ones, np.stack([g * ones for g in grads])))
    return out


def probe_at(box_length: float, points: np.ndarray) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """``(name, phi (K,), grad phi (K, D))`` at points of shape ``(K, D)``."""
    pts = np.atleast_2d(points)
    xs = [pts[:, a] for a in range(pts.shape[1])]
    out = []
    for name, fn in battery(box_length, pts.shape[1]):
        phi, grads = fn(xs)
        out.append((name, phi, np.stack([np.broadcast_to(g, phi.shape) for g in grads], axis=1)))
    return out
