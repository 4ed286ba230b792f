"""Strang-split evolution of the N-body and Hartree Schrödinger equations.

Natural units (hbar = m = 1).  The linear N-body Hamiltonian is
``-1/2 Laplacian + (1/N) sum_{j<k} V(|x_j - x_k|)`` on a D = N grid; the
Hartree equation evolves one particle in the self-consistent potential
``V * |psi|^2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import thermo
from .grid import Grid, GridError, periodic_convolution, quadrature
from .potentials import PairPotential, assemble_nbody_potential, kernel, trap_potential

log = logging.getLogger(__name__)

MODES = ("linear_nbody", "hartree")


class ConservationError(RuntimeError):
    """Norm or energy drifted past the configured tolerance."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True)
class SchrodingerProblem:
    grid: Grid
    n_particles: int
    potential: PairPotential
    mode: str = "linear_nbody"
    dt: float = 1e-3
    T: float = 1.0
    trap_omega: float = 0.0
    norm_tol: float = 1e-8
    energy_tol: float = 1e-3

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "linear_nbody" and self.grid.total_dims != self.n_particles:
            raise GridError("linear_nbody requires grid D = N")
        if self.mode == "hartree" and self.grid.total_dims != 1:
            raise GridError("hartree mode requires a one-axis grid")
        if not self.dt > 0 or self.T < self.dt:
            raise ValueError(f"need dt > 0 and T >= dt, got dt={self.dt}, T={self.T}")


@dataclass
class Evolution:
    """Sampled trajectory plus conservation log."""

    times: list[float]
    states: list[np.ndarray]
    norms: list[float] = field(default_factory=list)
    energies: list[float] = field(default_factory=list)

    def __iter__(self):
        return iter(zip(self.times, self.states))

    def __len__(self):
        return len(self.times)

    @property
    def max_norm_drift(self) -> float:
        return float(max(abs(n - 1.0) for n in self.norms))

    @property
    def max_energy_drift(self) -> float:
        e0 = self.energies[0]
        return float(max(abs(e - e0) for e in self.energies) / max(abs(e0), 1e-300))


def norm(grid: Grid, psi: np.ndarray) -> float:
    return float(np.sqrt(quadrature(grid, np.abs(psi) ** 2)))


def normalize(grid: Grid, psi: np.ndarray) -> np.ndarray:
    return psi / norm(grid, psi)


class StrangStepper:
    """Precomputed phases for ``exp(-i dt W/2) F^-1 exp(-i dt k^2/2) F exp(-i dt W/2)``."""

    def __init__(self, problem: SchrodingerProblem):
        self.problem = problem
        grid = problem.grid
        self._axes = tuple(range(grid.total_dims))
        self._kinetic = np.exp(-0.5j * problem.dt * grid.k_squared())
        if problem.mode == "linear_nbody":
            W = assemble_nbody_potential(grid, problem.potential, problem.n_particles, problem.trap_omega)
            self._half = np.exp(-0.5j * problem.dt * W)
        else:
            self._kernel = kernel(grid, problem.potential)
            self._external = trap_potential(grid, problem.trap_omega) if problem.trap_omega else None

    def hartree_potential(self, psi: np.ndarray) -> np.ndarray:
        W = periodic_convolution(self.problem.grid, self._kernel, np.abs(psi) ** 2)
        if self._external is not None:
            W = W + self._external
        return W

    def _potential_half(self, psi):
        if self.problem.mode == "linear_nbody":
            return self._half * psi
        return np.exp(-0.5j * self.problem.dt * self.hartree_potential(psi)) * psi

    def step(self, psi: np.ndarray) -> np.ndarray:
        psi = self._potential_half(psi)
        psi = np.fft.ifftn(self._kinetic * np.fft.fftn(psi, axes=self._axes), axes=self._axes)
        return self._potential_half(psi)


def step_strang(problem: SchrodingerProblem, psi: np.ndarray, stepper: StrangStepper | None = None) -> np.ndarray:
    """Advance ``psi`` by one step of ``problem.dt``."""
    stepper = stepper or StrangStepper(problem)
    out = stepper.step(psi)
    if not np.isfinite(out).all():
        raise FloatingPointError("non-finite wavefunction after Strang step")
    return out


def energy(problem: SchrodingerProblem, psi: np.ndarray) -> float:
    rep = thermo.energy_report(
        problem.grid, psi, problem.potential, mode=problem.mode,
        n_particles=problem.n_particles, trap_omega=problem.trap_omega,
    )
    return rep.total


def evolve(
    problem: SchrodingerProblem,
    psi0: np.ndarray,
    sample_times,
    check: bool = True,
) -> Evolution:
    """Integrate from ``t = 0`` and return ``psi`` at ``sample_times``.

    Sample times must lie on the ``dt`` lattice within ``[0, T]``.  Norm and
    energy are recorded at every sample; with ``check`` a drift beyond
    ``problem.norm_tol`` / ``problem.energy_tol`` raises
    :class:`ConservationError`.
    """
    grid = problem.grid
    grid.check_field(psi0)
    n0 = norm(grid, psi0)
    if abs(n0 - 1.0) > 1e-8:
        raise ValueError(f"initial state not normalized (norm={n0:.12g})")
    steps = []
    for t in sample_times:
        k = int(round(t / problem.dt))
        if abs(k * problem.dt - t) > 1e-9 * max(1.0, abs(t)) or k < 0 or t > problem.T + 1e-12:
            raise ValueError(f"sample time {t} not on the dt={problem.dt} lattice within [0, {problem.T}]")
        steps.append(k)
    if steps != sorted(steps):
        raise ValueError("sample times must be increasing")

    stepper = StrangStepper(problem)
    psi = np.asarray(psi0, dtype=complex)
    result = Evolution(times=[], states=[])
    e0 = energy(problem, psi)
    current = 0
    for t, k in zip(sample_times, steps):
        while current < k:
            psi = stepper.step(psi)
            current += 1
            if not np.isfinite(psi).all():
                raise FloatingPointError(f"non-finite wavefunction at step {current}")
        nrm = norm(grid, psi)
        e = energy(problem, psi)
        result.times.append(float(t))
        result.states.append(psi.copy())
        result.norms.append(nrm)
        result.energies.append(e)
        if check:
            if abs(nrm - 1.0) > problem.norm_tol:
                raise ConservationError(f"norm drift {abs(nrm - 1):.3e} at t={t}", t)
            if abs(e - e0) > problem.energy_tol * max(abs(e0), 1e-12):
                raise ConservationError(f"relative energy drift {abs(e - e0) / abs(e0):.3e} at t={t}", t)
    log.debug("evolved %s to t=%g in %d steps", problem.mode, result.times[-1], current)
    return result


def lattice(problem: SchrodingerProblem, every: int = 1) -> list[float]:
    """Sample times ``0, every*dt, ..., T``."""
    n = int(round(problem.T / problem.dt))
    return [k * problem.dt for k in range(0, n + 1, every)]


def gaussian_packet(grid: Grid, sigma: float = 1.0, center: float = 0.0, momentum: float = 0.0, axis_count: int | None = None) -> np.ndarray:
    """Normalized Gaussian with ``|psi|^2`` variance ``sigma^2`` on every axis (product state)."""
    D = grid.total_dims if axis_count is None else axis_count
    psi = np.ones(grid.shape, dtype=complex)
    for a in range(D):
        x = grid.coordinate(a)
        psi = psi * np.exp(-((x - center) ** 2) / (4 * sigma**2) + 1j * momentum * x)
    return normalize(grid, psi)


def exchange_residual(psi: np.ndarray) -> float:
    """Max deviation from symmetry under swapping the first two particle axes."""
    if psi.ndim < 2:
        return 0.0
    return float(np.max(np.abs(psi - np.swapaxes(psi, 0, 1))))
