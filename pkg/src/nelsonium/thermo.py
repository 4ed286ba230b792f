"""Energies, Boltzmann entropy and relative-entropy diagnostics.

Two relative-entropy conventions are carried side by side:

``half_girsanov``
    ``KL = 1/2 int_0^T int |b|^2 rho``, which splits as
    ``int_0^T K dt + (H(rho_T) - H(rho_0)) / 2`` because
    ``d/dt H(rho_t) = 2 int u . v rho``.
``paper_literal``
    ``int_0^T int |b|^2 rho`` compared with the decomposition
    ``int int (u^2 + v^2) rho + H(rho_0) - H(rho_T)``; the mismatch is
    reported as the closure gap.

The Hartree interaction energy likewise has two conventions:
``hamiltonian`` (``1/2 int int rho V rho``, the conserved quantity and the
large-N limit of ``V_N / N``) and ``paper_literal`` (no one-half).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .grid import Grid, periodic_convolution, quadrature, spectral_gradient
from .potentials import PairPotential, assemble_nbody_potential, kernel, trap_potential

log = logging.getLogger(__name__)

KL_CONVENTIONS = ("half_girsanov", "paper_literal")
ENERGY_CONVENTIONS = ("hamiltonian", "paper_literal")


class CoarseSeriesError(ValueError):
    """Time sampling too coarse for the requested quadrature accuracy."""


class ConventionMismatch(ValueError):
    pass


class MonotonicityViolation(AssertionError):
    pass


@dataclass
class EnergyReport:
    t: float
    kinetic: float
    potential: float
    total: float
    n_particles: int = 1
    convention: str = "hamiltonian"

    @property
    def per_particle(self) -> dict:
        n = self.n_particles
        return {"kinetic": self.kinetic / n, "potential": self.potential / n, "total": self.total / n}

    def to_dict(self) -> dict:
        return asdict(self) | {"per_particle": self.per_particle}


@dataclass
class KineticForms:
    gradient_form: float
    madelung_form: float

    @property
    def gap(self) -> float:
        return abs(self.gradient_form - self.madelung_form)

    @property
    def relative_gap(self) -> float:
        return self.gap / max(abs(self.gradient_form), 1e-300)


@dataclass
class EntropyReport:
    H0: float
    HT: float
    kinetic_integral: float
    kl_quadrature: float
    convention: str
    decomposition: float
    closure_gap: float
    kl_pathwise: float | None = None
    kl_pathwise_se: float | None = None
    excluded_mass: float = 0.0
    riemann_error: float = 0.0
    alternative: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _grad_norm_sq(grid: Grid, psi: np.ndarray) -> np.ndarray:
    return sum(np.abs(spectral_gradient(grid, psi, a)) ** 2 for a in range(grid.total_dims))


def kinetic_energy(grid: Grid, psi=None, fields=None) -> KineticForms:
    """Kinetic energy as ``1/2 int |grad psi|^2`` and as ``1/2 int (|u|^2 + |v|^2) rho``.

    Pass ``psi`` for the gradient form, ``fields`` (:class:`MadelungFields`)
    for the Madelung form, or both.  A missing form is derived from the
    other input when possible.
    """
    if psi is None and fields is None:
        raise ValueError("need psi or fields")
    if psi is None:
        psi = fields.psi
    if fields is None:
        from .madelung import extract
        fields = extract(grid, psi)
    grad_form = 0.5 * quadrature(grid, _grad_norm_sq(grid, psi)) if psi is not None else np.nan
    mad_form = 0.5 * quadrature(grid, np.sum(fields.u**2 + fields.v**2, axis=0) * fields.rho)
    return KineticForms(float(grad_form), float(mad_form))


def potential_energy(
    grid: Grid,
    psi: np.ndarray,
    potential: PairPotential,
    mode: str = "linear_nbody",
    n_particles: int | None = None,
    trap_omega: float = 0.0,
    convention: str = "hamiltonian",
) -> float:
    """Interaction (plus trap) energy.

    ``linear_nbody``: ``(1/N) sum_{j<k} int V(|x_j - x_k|) rho_N``.
    ``hartree``: ``c int int rho(x) V(|x - y|) rho(y)`` with ``c = 1/2``
    under ``hamiltonian`` and ``c = 1`` under ``paper_literal``.
    """
    if convention not in ENERGY_CONVENTIONS:
        raise ValueError(f"convention must be one of {ENERGY_CONVENTIONS}")
    rho = np.abs(psi) ** 2
    if mode == "linear_nbody":
        N = grid.total_dims if n_particles is None else n_particles
        W = assemble_nbody_potential(grid, potential, N, trap_omega)
        return float(quadrature(grid, W * rho))
    if mode != "hartree":
        raise ValueError(f"unknown mode {mode!r}")
    if grid.total_dims != 1:
        raise ValueError("hartree energy needs a one-axis grid")
    coef = 0.5 if convention == "hamiltonian" else 1.0
    out = coef * quadrature(grid, rho * periodic_convolution(grid, kernel(grid, potential), rho))
    if trap_omega:
        out += quadrature(grid, trap_potential(grid, trap_omega) * rho)
    return float(out)


def energy_report(
    grid: Grid,
    psi: np.ndarray,
    potential: PairPotential,
    mode: str = "linear_nbody",
    n_particles: int | None = None,
    trap_omega: float = 0.0,
    convention: str = "hamiltonian",
    t: float = 0.0,
) -> EnergyReport:
    kin = 0.5 * float(quadrature(grid, _grad_norm_sq(grid, psi)))
    pot = potential_energy(grid, psi, potential, mode, n_particles, trap_omega, convention)
    n = (grid.total_dims if n_particles is None else n_particles) if mode == "linear_nbody" else 1
    return EnergyReport(t, kin, pot, kin + pot, n, convention)


def boltzmann_entropy(grid: Grid, rho: np.ndarray, floor: float = 0.0) -> tuple[float, float]:
    """``int rho log rho`` with ``0 log 0 = 0``.

    Returns the entropy and the mass excluded by ``floor`` (nodes with
    ``rho <= floor`` contribute nothing).
    """
    rho = np.asarray(rho, dtype=float)
    if rho.min() < -1e-14:
        raise ValueError(f"negative density entry {rho.min():.3e}")
    keep = rho > max(floor, 0.0)
    safe = np.where(keep, rho, 1.0)
    H = quadrature(grid, np.where(keep, rho * np.log(safe), 0.0))
    excluded = quadrature(grid, np.where(keep, 0.0, np.clip(rho, 0.0, None)))
    return float(H), float(excluded)


def _trapezoid(values, h: float) -> float:
    return float(np.trapezoid(values, dx=h))


def _riemann_error(values, h: float) -> float:
    """Gap between the trapezoid rule on the full lattice and on every other sample."""
    values = np.asarray(values)
    if len(values) < 5 or (len(values) - 1) % 2:
        return 0.0
    return abs(_trapezoid(values, h) - _trapezoid(values[::2], 2 * h))


def relative_entropy_fields(
    times,
    fields_series,
    convention: str = "half_girsanov",
    riemann_tol: float = 1e-4,
) -> EntropyReport:
    """Field-based relative entropy of the Nelson law against Wiener measure.

    Both conventions are computed; ``convention`` selects which one fills
    the primary fields and the other lands in ``alternative``.

    Raises
    ------
    CoarseSeriesError
        When halving the time resolution changes the kl integral by more
        than ``riemann_tol`` (relative to ``max(1, |kl|)``).
    """
    if convention not in KL_CONVENTIONS:
        raise ValueError(f"convention must be one of {KL_CONVENTIONS}")
    t = np.asarray(times, dtype=float)
    h = np.diff(t)
    if len(t) < 2 or np.max(np.abs(h - h[0])) > 1e-9 * max(1.0, h[0]):
        raise ValueError("need a uniform time series of at least two slices")
    h = float(h[0])
    grid = fields_series[0].grid
    kin = []
    b2 = []
    for f in fields_series:
        kin.append(0.5 * quadrature(grid, np.sum(f.u**2 + f.v**2, axis=0) * f.rho))
        b2.append(quadrature(grid, np.sum((f.u + f.v) ** 2, axis=0) * f.rho))
    H0, ex0 = boltzmann_entropy(grid, fields_series[0].rho)
    HT, exT = boltzmann_entropy(grid, fields_series[-1].rho)
    K_int = _trapezoid(kin, h)
    b_int = _trapezoid(b2, h)
    err = _riemann_error(b2, h)
    if err > riemann_tol * max(1.0, abs(b_int)):
        raise CoarseSeriesError(f"time series too coarse: Riemann error estimate {err:.3e}")

    half = {
        "kl": 0.5 * b_int,
        "decomposition": K_int + 0.5 * (HT - H0),
    }
    literal = {
        "kl": b_int,
        "decomposition": 2.0 * K_int + H0 - HT,
    }
    for d in (half, literal):
        d["closure_gap"] = abs(d["kl"] - d["decomposition"])
    primary, other = (half, literal) if convention == "half_girsanov" else (literal, half)
    other_name = "paper_literal" if convention == "half_girsanov" else "half_girsanov"
    return EntropyReport(
        H0=H0, HT=HT, kinetic_integral=K_int, kl_quadrature=primary["kl"], convention=convention,
        decomposition=primary["decomposition"], closure_gap=primary["closure_gap"],
        excluded_mass=max(ex0, exT), riemann_error=err,
        alternative={"convention": other_name} | other,
    )


def relative_entropy_pathwise(ensemble, drift=None, convention: str = "half_girsanov") -> tuple[float, float]:
    """Monte Carlo estimate of the relative entropy from per-path ``int |b|^2 dt``.

    ``ensemble`` is a :class:`~nelsonium.diffusion.PathEnsemble`; when a
    drift is given its provenance id must match the ensemble's.

    Returns
    -------
    (estimate, standard_error)
    """
    if convention not in KL_CONVENTIONS:
        raise ValueError(f"convention must be one of {KL_CONVENTIONS}")
    if drift is not None and ensemble.drift_id != drift.provenance_id:
        raise ConventionMismatch(
            f"ensemble generated under drift {ensemble.drift_id!r}, got {drift.provenance_id!r}"
        )
    vals = np.asarray(ensemble.drift_energy, dtype=float)
    if convention == "half_girsanov":
        vals = 0.5 * vals
    if not vals.any():
        return 0.0, 0.0
    se = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else float("inf")
    return float(vals.mean()), se


@dataclass
class ConvergenceSeries:
    N: list[int]
    per_particle: list[float]
    limit: float
    errors: list[float]
    decay_exponent: float
    monotone: bool

    def to_dict(self) -> dict:
        return asdict(self)


def kinetic_convergence_series(N_list, values, limit: float, per_particle: bool = False) -> ConvergenceSeries:
    """Compare ``K_N / N`` with its large-N limit and fit ``|error| ~ N^-p``.

    ``values`` are totals ``K_N`` unless ``per_particle`` is set.  The same
    routine serves the potential energy.
    """
    N = np.asarray(N_list, dtype=float)
    if N.size < 3:
        raise ValueError("need at least three N values")
    order = np.argsort(N)
    N = N[order]
    vals = np.asarray(values, dtype=float)[order]
    pp = vals if per_particle else vals / N
    err = np.abs(pp - limit)
    nz = err > 1e-300
    p = float(-np.polyfit(np.log(N[nz]), np.log(err[nz]), 1)[0]) if nz.sum() >= 2 else float("inf")
    monotone = bool(np.all(np.diff(err) <= 1e-14 * max(1.0, abs(limit))))
    return ConvergenceSeries(
        [int(n) for n in N], pp.tolist(), float(limit), err.tolist(), p, monotone,
    )


@dataclass
class MonotonicityResult:
    holds: bool
    margin: float
    jensen_gap: float | None


def entropy_monotonicity_check(
    kl_projected: float,
    kl_conditioned: float,
    convention_projected: str = "half_girsanov",
    convention_conditioned: str = "half_girsanov",
    jensen_gap: float | None = None,
    tol: float = 1e-10,
    strict: bool = False,
) -> MonotonicityResult:
    """Check ``KL(P_{N,n} | W) <= KL([P_N]_n | W)`` for the conditioned vs projected laws.

    ``margin = kl_projected - kl_conditioned``.  With ``strict`` a
    violation raises :class:`MonotonicityViolation`; otherwise it is logged.
    """
    if convention_projected != convention_conditioned:
        raise ConventionMismatch(f"{convention_projected} vs {convention_conditioned}")
    margin = float(kl_projected - kl_conditioned)
    holds = margin >= -tol
    if not holds:
        msg = f"conditioned relative entropy exceeds projected one by {-margin:.3e}"
        if strict:
            raise MonotonicityViolation(msg)
        log.warning(msg)
    return MonotonicityResult(holds, margin, jensen_gap)
