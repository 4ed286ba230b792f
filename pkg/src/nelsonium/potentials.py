"""Pair potentials and assembled configuration-space potentials."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from itertools import combinations

import numpy as np

from .grid import Grid, GridError

KINDS = ("gaussian_bump", "cosine_bounded", "quadratic_oracle", "constant")


@dataclass(frozen=True)
class PairPotential:
    """Even pair potential ``V(r)`` of the distance between two particles.

    ``width`` is the Gaussian width for ``gaussian_bump`` and the period for
    ``cosine_bounded``; it is ignored by the other kinds.
    """

    kind: str
    amplitude: float
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in ("gaussian_bump", "cosine_bounded") and not self.width > 0:
            raise ValueError("width must be positive")

    @property
    def bounded(self) -> bool:
        return self.kind != "quadratic_oracle"

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        g = self.amplitude
        if self.kind == "gaussian_bump":
            return g * np.exp(-0.5 * (r / self.width) ** 2)
        if self.kind == "cosine_bounded":
            return g * np.cos(2.0 * np.pi * r / self.width)
        if self.kind == "quadratic_oracle":
            return g * r**2
        return np.full_like(r, g)

    def derivative(self, r):
        """``dV/dr`` evaluated at signed displacement ``r`` (odd in ``r``)."""
        r = np.asarray(r, dtype=float)
        g = self.amplitude
        if self.kind == "gaussian_bump":
            return -g * r / self.width**2 * np.exp(-0.5 * (r / self.width) ** 2)
        if self.kind == "cosine_bounded":
            k = 2.0 * np.pi / self.width
            return -g * k * np.sin(k * r)
        if self.kind == "quadratic_oracle":
            return 2.0 * g * r
        return np.zeros_like(r)

    def to_dict(self) -> dict:
        return asdict(self) | {"bounded": self.bounded}


def kernel(grid: Grid, pot: PairPotential) -> np.ndarray:
    """``V(|x|)`` sampled on the one-axis nodes, for use with periodic_convolution."""
    return pot(np.abs(grid.nodes))


def kernel_derivative(grid: Grid, pot: PairPotential) -> np.ndarray:
    return pot.derivative(grid.nodes)


def trap_potential(grid: Grid, omega: float) -> np.ndarray:
    """Harmonic external trap ``sum_j omega^2 x_j^2 / 2`` (oracle test configuration)."""
    return sum(0.5 * omega**2 * grid.coordinate(a) ** 2 for a in range(grid.total_dims)) + np.zeros(grid.shape)


def assemble_nbody_potential(
    grid: Grid, pot: PairPotential, n_particles: int, trap_omega: float = 0.0
) -> np.ndarray:
    """``W = (1/N) sum_{j<k} V(|x_j - x_k|)`` on the configuration grid.

    Distances use the minimal periodic image.  A harmonic trap is added when
    ``trap_omega`` is nonzero.
    """
    if grid.total_dims != n_particles:
        raise GridError(f"configuration grid has D={grid.total_dims}, expected D=N={n_particles}")
    W = np.zeros(grid.shape)
    for j, k in combinations(range(n_particles), 2):
        r = grid.min_image(grid.coordinate(j) - grid.coordinate(k))
        W = W + pot(np.abs(r))
    W /= n_particles
    if trap_omega:
        W += trap_potential(grid, trap_omega)
    return W


def nbody_potential_gradient(
    grid: Grid, pot: PairPotential, n_particles: int, trap_omega: float = 0.0
) -> np.ndarray:
    """Analytic gradient of :func:`assemble_nbody_potential`, shape ``(N,) + grid.shape``."""
    if grid.total_dims != n_particles:
        raise GridError(f"configuration grid has D={grid.total_dims}, expected D=N={n_particles}")
    grad = np.zeros((n_particles,) + grid.shape)
    for j, k in combinations(range(n_particles), 2):
        r = grid.min_image(grid.coordinate(j) - grid.coordinate(k))
        dV = pot.derivative(r) / n_particles
        grad[j] += dV
        grad[k] -= dV
    if trap_omega:
        for a in range(n_particles):
            grad[a] += trap_omega**2 * grid.coordinate(a)
    return grad
