"""Madelung fields, marginal/conditioned variables and PDE residuals.

Osmotic and current velocities come from the logarithmic derivative
``w = grad(psi)/psi = u + i v``.  Their spatial derivatives are formed from
spectral derivatives of ``psi`` divided pointwise by ``psi``, never by
differentiating the node-masked velocity fields themselves, so masking does
not inject Gibbs ringing into the residuals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product as iproduct

import numpy as np

from .grid import Grid, GridError, periodic_convolution, quadrature, spectral_gradient
from .potentials import (
    PairPotential, kernel, kernel_derivative, nbody_potential_gradient,
)
from .probes import PROBE_BATTERY_ID, probe_battery

DEFAULT_EPS_NODE = 1e-12
RESIDUAL_MODES = ("external_V", "hartree", "hartree_doubled")


class MarginalError(ValueError):
    pass


@dataclass(frozen=True)
class MadelungFields:
    """Density, current and velocities of one time slice.

    ``u`` and ``v`` are zero on ``node_mask`` (``rho < eps * max rho``).
    """

    grid: Grid
    rho: np.ndarray
    j: np.ndarray
    u: np.ndarray
    v: np.ndarray
    node_mask: np.ndarray
    psi: np.ndarray | None = None
    rho_u: np.ndarray | None = None

    @property
    def b(self) -> np.ndarray:
        return self.u + self.v

    @property
    def osmotic_flux(self) -> np.ndarray:
        """``rho u = grad(rho)/2`` without the node mask."""
        return self.rho_u if self.rho_u is not None else self.rho[None] * self.u

    @property
    def mask_mass(self) -> float:
        return float(quadrature(self.grid, np.where(self.node_mask, self.rho, 0.0)))


@dataclass(frozen=True)
class MarginalSet:
    n: int
    grid: Grid
    rho: np.ndarray
    j: np.ndarray
    u: np.ndarray
    v: np.ndarray
    node_mask: np.ndarray
    mask_mass: float = 0.0
    rho_u: np.ndarray | None = None

    @property
    def b(self) -> np.ndarray:
        return self.u + self.v

    @property
    def osmotic_flux(self) -> np.ndarray:
        return self.rho_u if self.rho_u is not None else self.rho[None] * self.u


def _node_mask(rho: np.ndarray, eps: float) -> np.ndarray:
    return rho < eps * rho.max()


def _safe_divide(num: np.ndarray, den: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.where(mask, 0.0, num / np.where(mask, 1.0, den))


def extract(grid: Grid, psi: np.ndarray, eps_node: float = DEFAULT_EPS_NODE) -> MadelungFields:
    """Madelung fields of a wavefunction sampled on ``grid``.

    ``rho = |psi|^2``, ``j = Im(conj(psi) grad psi)``, ``u = Re(conj(psi) grad psi)/rho``
    and ``v = j/rho`` off the node mask, zero on it.
    """
    grid.check_field(psi)
    dpsi = np.stack([spectral_gradient(grid, psi, a) for a in range(grid.total_dims)])
    if not np.isfinite(dpsi).all():
        raise FloatingPointError("non-finite gradient of psi")
    rho = np.abs(psi) ** 2
    mask = _node_mask(rho, eps_node)
    prod = np.conj(psi)[None] * dpsi
    j = prod.imag
    u = _safe_divide(prod.real, rho[None], mask[None])
    v = _safe_divide(j, rho[None], mask[None])
    return MadelungFields(grid, rho, j, u, v, mask, psi=np.asarray(psi), rho_u=prod.real)


def _marginal_from(grid_n: Grid, n: int, rho_n, j_n, rho_u_n, eps_node, max_mask_mass) -> MarginalSet:
    mask = _node_mask(rho_n, eps_node)
    mass = float(quadrature(grid_n, np.where(mask, rho_n, 0.0)))
    if mass > max_mask_mass:
        raise MarginalError(f"marginal density below node threshold on a set of mass {mass:.3e}")
    u = _safe_divide(rho_u_n, rho_n[None], mask[None])
    v = _safe_divide(j_n, rho_n[None], mask[None])
    return MarginalSet(n, grid_n, rho_n, j_n, u, v, mask, mass, rho_u=rho_u_n)


def marginalize(
    fields, n: int, eps_node: float = DEFAULT_EPS_NODE, max_mask_mass: float = 1e-6
) -> MarginalSet:
    """Keep the first ``n`` particles: integrate ``rho``, ``j`` and ``rho u`` over the rest.

    ``rho u`` is integrated unmasked so the node mask of the full density
    does not leak into the conditioned osmotic velocity.

    ``fields`` may be :class:`MadelungFields` or a :class:`MarginalSet` (for
    chained marginalization).
    """
    grid = fields.grid
    N = grid.total_dims
    if not 1 <= n < N:
        raise MarginalError(f"need 1 <= n < N, got n={n}, N={N}")
    axes = tuple(range(n, N))
    rho_n = quadrature(grid, fields.rho, axes)
    j_n = np.stack([quadrature(grid, fields.j[a], axes) for a in range(n)])
    flux = fields.osmotic_flux
    rho_u = np.stack([quadrature(grid, flux[a], axes) for a in range(n)])
    return _marginal_from(grid.with_dims(n), n, rho_n, j_n, rho_u, eps_node, max_mask_mass)


def conditional_drift(fields, n: int, **kw) -> np.ndarray:
    """``b_{N,n} = u_{N,n} + v_{N,n}``: drift of the first ``n`` coordinates conditioned on them."""
    return marginalize(fields, n, **kw).b


def conditional_expectation(grid: Grid, rho: np.ndarray, F: np.ndarray, n: int, rho_n: np.ndarray | None = None, mask_n=None) -> np.ndarray:
    """``E[F | x_1..x_n]`` under density ``rho`` (zero where the marginal is masked)."""
    axes = tuple(range(n, grid.total_dims))
    if rho_n is None:
        rho_n = quadrature(grid, rho, axes)
    if mask_n is None:
        mask_n = _node_mask(rho_n, DEFAULT_EPS_NODE)
    return _safe_divide(quadrature(grid, rho * F, axes), rho_n, mask_n)


def osmotic_identity_error(fields, marginal: MarginalSet, bulk: float = 1e-6) -> float:
    """Max relative gap between conditioned ``u_{N,n}`` and ``grad rho_{N,n} / (2 rho_{N,n})``.

    Compared where ``rho_{N,n} > bulk * max``; scaled by the max of ``|u|`` there.
    """
    g = marginal.grid
    ref = np.stack([spectral_gradient(g, marginal.rho, a) for a in range(g.total_dims)])
    keep = marginal.rho > bulk * marginal.rho.max()
    ref = ref / (2.0 * np.where(keep, marginal.rho, 1.0))
    diff = np.abs(marginal.u - ref)[:, keep]
    return float(diff.max() / max(np.abs(ref[:, keep]).max(), 1.0))


class WaveDerivatives:
    """Cached spectral derivatives of a wavefunction and the log-derivative algebra built on them."""

    def __init__(self, grid: Grid, psi: np.ndarray, mask: np.ndarray):
        self.grid = grid
        self.psi = psi
        self.mask = mask
        self._axes = tuple(range(grid.total_dims))
        self._hat = np.fft.fftn(psi, axes=self._axes)
        self._cache: dict[tuple[int, ...], np.ndarray] = {}
        self._inv = np.where(mask, 0.0, 1.0 / np.where(mask, 1.0, psi))

    def d(self, *axes: int) -> np.ndarray:
        key = tuple(sorted(axes))
        if key not in self._cache:
            mult = 1.0
            for a in key:
                mult = mult * (1j * self.grid.wavenumber(a))
            self._cache[key] = np.fft.ifftn(self._hat * mult, axes=self._axes)
        return self._cache[key]

    @property
    def D(self):
        return self.grid.total_dims

    def w(self, k: int) -> np.ndarray:
        return self.d(k) * self._inv

    def dw(self, l: int, k: int) -> np.ndarray:
        """``d_l w_k = d_l d_k psi / psi - w_l w_k``."""
        return self.d(l, k) * self._inv - self.w(l) * self.w(k)

    def laplacian_ratio(self) -> np.ndarray:
        return sum(self.d(a, a) for a in self._axes) * self._inv

    def quantum_force(self, k: int) -> np.ndarray:
        """``1/2 d_k (|u|^2 + div u)`` using ``|u|^2 + div u = Re(lap psi / psi) + |v|^2``."""
        third = sum(self.d(k, a, a) for a in self._axes) * self._inv
        term = (third - self.laplacian_ratio() * self.w(k)).real
        term = term + 2.0 * sum(self.w(l).imag * self.dw(k, l).imag for l in self._axes)
        return 0.5 * np.where(self.mask, 0.0, term)

    def transport(self, k: int, axes=None) -> np.ndarray:
        """``sum_{l in axes} v_l d_l v_k``."""
        axes = self._axes if axes is None else axes
        return sum(self.w(l).imag * self.dw(l, k).imag for l in axes)


def _uniform_spacing(times) -> float:
    t = np.asarray(times, dtype=float)
    if t.size < 3:
        raise ValueError("need at least three time slices")
    h = np.diff(t)
    if np.max(np.abs(h - h[0])) > 1e-9 * max(1.0, abs(h[0])):
        raise ValueError("time slices must be uniformly spaced")
    return float(h[0])


@dataclass
class ContinuityResidual:
    weak: float
    strong: float
    probe_battery: str = PROBE_BATTERY_ID
    per_probe: list[float] = field(default_factory=list)


def continuity_residual(grid: Grid, times, rho_series, v_series) -> ContinuityResidual:
    """Weak and strong residuals of ``d_t rho + div(rho v) = 0``.

    The weak form is the sup over the probe battery of
    ``|int phi rho_T - int phi rho_0 - int_0^T int (v . grad phi) rho|``
    (trapezoid in time); the strong form is the ``L^2(dx dt)`` norm of the
    central-difference residual over interior slices.
    """
    if not (len(times) == len(rho_series) == len(v_series)):
        raise ValueError("misaligned series")
    h = _uniform_spacing(times)
    rhos = [np.asarray(r) for r in rho_series]
    js = [np.asarray(v) * r[None] for v, r in zip(v_series, rhos)]

    per_probe = []
    for _, phi, dphi in probe_battery(grid):
        flux = [quadrature(grid, np.sum(dphi * j, axis=0)) for j in js]
        lhs = quadrature(grid, phi * rhos[-1]) - quadrature(grid, phi * rhos[0])
        per_probe.append(abs(lhs - np.trapezoid(flux, dx=h)))

    acc = 0.0
    for i in range(1, len(rhos) - 1):
        r = (rhos[i + 1] - rhos[i - 1]) / (2 * h)
        r = r + sum(spectral_gradient(grid, js[i][a], a) for a in range(grid.total_dims))
        acc += h * quadrature(grid, r**2)
    return ContinuityResidual(max(per_probe), float(np.sqrt(acc)), per_probe=[float(p) for p in per_probe])


def _potential_gradient(grid: Grid, psi, mode, potential, trap_omega, external_gradient):
    if mode == "external_V":
        if external_gradient is not None:
            return external_gradient
        pot = potential if potential is not None else PairPotential("constant", 0.0)
        return nbody_potential_gradient(grid, pot, grid.total_dims, trap_omega)
    if grid.total_dims != 1:
        raise GridError("hartree residual modes need a one-axis grid")
    coef = 2.0 if mode == "hartree_doubled" else 1.0
    dk = kernel_derivative(grid, potential)
    grad = coef * periodic_convolution(grid, dk, np.abs(psi) ** 2)
    if trap_omega:
        grad = grad + trap_omega**2 * grid.nodes
    return grad[None]


@dataclass
class MadelungResidual:
    value: float
    mode: str
    terms: dict[str, float]
    mask_mass: float


def madelung_residual(
    times,
    fields_series,
    potential_mode: str = "external_V",
    potential: PairPotential | None = None,
    trap_omega: float = 0.0,
    external_gradient: np.ndarray | None = None,
) -> MadelungResidual:
    """``L^2(rho dx dt)`` norm of the second Madelung equation residual.

    ``d_t v + (v . grad) v - 1/2 grad(u^2 + div u) + grad V_eff`` with
    ``V_eff`` the external potential (``external_V``, which includes an
    assembled N-body pair potential when ``potential`` is given),
    ``V * rho`` (``hartree``) or ``2 V * rho`` (``hartree_doubled``).
    Evaluated on interior slices, off the node masks of the three slices
    entering the time difference.
    """
    if potential_mode not in RESIDUAL_MODES:
        raise ValueError(f"potential_mode must be one of {RESIDUAL_MODES}")
    if potential_mode != "external_V" and potential is None:
        raise ValueError("hartree residual modes need the pair potential")
    h = _uniform_spacing(times)
    grid = fields_series[0].grid
    D = grid.total_dims
    acc = 0.0
    norms = {"dt_v": 0.0, "transport": 0.0, "quantum": 0.0, "potential": 0.0}
    mask_mass = 0.0
    for i in range(1, len(fields_series) - 1):
        f = fields_series[i]
        if f.psi is None:
            raise ValueError("madelung_residual needs fields extracted from a wavefunction")
        mask = fields_series[i - 1].node_mask | f.node_mask | fields_series[i + 1].node_mask
        wd = WaveDerivatives(grid, f.psi, mask)
        grad_v_eff = _potential_gradient(grid, f.psi, potential_mode, potential, trap_omega, external_gradient)
        weight = np.where(mask, 0.0, f.rho)
        res2 = np.zeros(grid.shape)
        for k in range(D):
            dtv = (fields_series[i + 1].v[k] - fields_series[i - 1].v[k]) / (2 * h)
            tr = wd.transport(k)
            qf = wd.quantum_force(k)
            r = dtv + tr - qf + grad_v_eff[k]
            res2 += np.where(mask, 0.0, r.real if np.iscomplexobj(r) else r) ** 2
            for name, term in (("dt_v", dtv), ("transport", tr), ("quantum", qf), ("potential", grad_v_eff[k])):
                norms[name] += h * quadrature(grid, weight * np.real(term) ** 2)
        acc += h * quadrature(grid, weight * res2)
        mask_mass = max(mask_mass, f.mask_mass)
    return MadelungResidual(
        float(np.sqrt(acc)), potential_mode,
        {k: float(np.sqrt(v)) for k, v in norms.items()}, mask_mass,
    )


@dataclass
class HierarchyReport:
    """Finite-hierarchy residual with the magnitude of every term.

    Terms follow the grouping ``d_t v_{N,n} = transport + conditioned_flux +
    marginal_flux + quantum + intra_potential + inter_potential (+ external)``.
    """

    N: int
    n: int
    residual: float
    terms: dict[str, float]
    relative: float
    grid: dict = field(default_factory=dict)
    dt: float = 0.0

    def to_dict(self) -> dict:
        return {
            "N": self.N, "n": self.n, "residual": self.residual, "relative_residual": self.relative,
            "terms": self.terms, "grid": self.grid, "sample_spacing": self.dt,
            "grouping": list(self.terms),
        }


def _inter_potential(grid_np1: Grid, rho_np1: np.ndarray, potential: PairPotential, n: int, k: int):
    """``int V'(x_k - z) rho_{n+1}(x, z) dz`` over the last axis of an (n+1)-particle density."""
    r = grid_np1.min_image(grid_np1.coordinate(k) - grid_np1.coordinate(n))
    return quadrature(grid_np1, potential.derivative(r) * rho_np1, (n,))


def _hierarchy_terms(fields: MadelungFields, n: int, potential: PairPotential, trap_omega: float, eps_node: float):
    grid = fields.grid
    N = grid.total_dims
    axes_rest = tuple(range(n, N))
    marg = marginalize(fields, n, eps_node=eps_node, max_mask_mass=np.inf)
    gn = marg.grid
    rho_n = marg.rho
    mask_n = marg.node_mask
    wd = WaveDerivatives(grid, fields.psi, fields.node_mask)
    cond = lambda F: conditional_expectation(grid, fields.rho, np.where(fields.node_mask, 0.0, np.real(F)), n, rho_n, mask_n)

    first = tuple(range(n))
    v = [wd.w(l).imag for l in range(N)]
    u = [wd.w(l).real for l in range(N)]
    div_v_first = sum(wd.dw(l, l).imag for l in first)
    vu_first = sum(v[l] * u[l] for l in first)

    grad_rho_n = [spectral_gradient(gn, rho_n, a) for a in range(n)]
    grad_v_n = [[_safe_divide(spectral_gradient(gn, marg.j[k], l) - marg.v[k] * grad_rho_n[l], rho_n, mask_n)
                 for k in range(n)] for l in range(n)]
    div_v_n = sum(grad_v_n[l][l] for l in range(n))
    vu_n = sum(marg.v[l] * marg.u[l] for l in range(n))

    rho_np1 = fields.rho if n + 1 == N else quadrature(grid, fields.rho, tuple(range(n + 1, N)))
    g_np1 = grid.with_dims(n + 1)

    terms = {}
    for k in range(n):
        t = {}
        t["transport"] = -cond(wd.transport(k, first))
        t["conditioned_flux"] = -cond(v[k] * (div_v_first + 2.0 * vu_first))
        t["marginal_flux"] = marg.v[k] * (div_v_n + 2.0 * vu_n)
        t["quantum"] = cond(wd.quantum_force(k))
        intra = np.zeros(gn.shape)
        for m in range(n):
            if m != k:
                intra = intra + potential.derivative(gn.min_image(gn.coordinate(k) - gn.coordinate(m)))
        t["intra_potential"] = -intra / N
        inter = _inter_potential(g_np1, rho_np1, potential, n, k)
        t["inter_potential"] = -(N - n) / N * _safe_divide(inter, rho_n, mask_n)
        t["external"] = -trap_omega**2 * gn.coordinate(k) * np.ones(gn.shape)
        for name, arr in t.items():
            terms.setdefault(name, []).append(np.where(mask_n, 0.0, arr))
    return marg, {name: np.stack(arrs) for name, arrs in terms.items()}


def hierarchy_residual(
    times,
    fields_series,
    n: int,
    potential: PairPotential,
    trap_omega: float = 0.0,
    eps_node: float = DEFAULT_EPS_NODE,
) -> HierarchyReport:
    """Residual of the finite Madelung hierarchy for the first ``n`` of ``N`` particles.

    ``fields_series`` are N-body :class:`MadelungFields` carrying ``psi``;
    norms are ``L^2(rho_{N,n} dx dt)`` over interior slices.
    """
    h = _uniform_spacing(times)
    grid = fields_series[0].grid
    N = grid.total_dims
    if not 1 <= n < N:
        raise MarginalError(f"need 1 <= n < N, got n={n}, N={N}")
    margs = [marginalize(f, n, eps_node=eps_node, max_mask_mass=np.inf) for f in fields_series]
    gn = margs[0].grid
    acc = 0.0
    lhs_acc = 0.0
    term_acc: dict[str, float] = {}
    for i in range(1, len(fields_series) - 1):
        marg, terms = _hierarchy_terms(fields_series[i], n, potential, trap_omega, eps_node)
        mask = margs[i - 1].node_mask | marg.node_mask | margs[i + 1].node_mask
        weight = np.where(mask, 0.0, marg.rho)
        lhs = (margs[i + 1].v - margs[i - 1].v) / (2 * h)
        rhs = sum(terms.values())
        r = np.where(mask[None], 0.0, lhs - rhs)
        acc += h * quadrature(gn, weight * np.sum(r**2, axis=0))
        lhs_acc += h * quadrature(gn, weight * np.sum(np.where(mask[None], 0.0, lhs) ** 2, axis=0))
        for name, arr in terms.items():
            term_acc[name] = term_acc.get(name, 0.0) + h * quadrature(gn, weight * np.sum(arr**2, axis=0))
    terms_out = {"dt_v": float(np.sqrt(lhs_acc))} | {k: float(np.sqrt(v)) for k, v in term_acc.items()}
    scale = max(terms_out.values())
    res = float(np.sqrt(acc))
    return HierarchyReport(
        N, n, res, terms_out, res / scale if scale > 0 else 0.0,
        grid={"box_length": grid.box_length, "points_per_axis": grid.points_per_axis, "total_dims": N},
        dt=h,
    )


def tensor_power(psi: np.ndarray, n: int) -> np.ndarray:
    out = psi
    for _ in range(n - 1):
        out = np.multiply.outer(out, psi)
    return out


def infinite_hierarchy_residual(
    grid1: Grid,
    times,
    psi_series,
    n: int,
    potential: PairPotential,
    trap_omega: float = 0.0,
    eps_node: float = DEFAULT_EPS_NODE,
) -> HierarchyReport:
    """Plug ``(rho^{(x)n}, (v(x_1), ..., v(x_n)))`` from one-body states into the infinite hierarchy.

    ``d_t v_n = -(v_n . grad) v_n + 1/2 grad(u_n^2 + div u_n)
    - sum_j int grad V(x_j - z) rho_{n+1}(x, z) / rho_n(x) dz``.
    """
    h = _uniform_spacing(times)
    gn = grid1.with_dims(n)
    g_np1 = grid1.with_dims(n + 1)
    fields = [extract(gn, tensor_power(p, n), eps_node) for p in psi_series]
    acc = 0.0
    lhs_acc = 0.0
    term_acc: dict[str, float] = {}
    for i in range(1, len(fields) - 1):
        f = fields[i]
        mask = fields[i - 1].node_mask | f.node_mask | fields[i + 1].node_mask
        weight = np.where(mask, 0.0, f.rho)
        wd = WaveDerivatives(gn, f.psi, mask)
        rho_np1 = np.abs(tensor_power(psi_series[i], n + 1)) ** 2
        lhs = (fields[i + 1].v - fields[i - 1].v) / (2 * h)
        terms = {"transport": [], "quantum": [], "inter_potential": [], "external": []}
        for k in range(n):
            terms["transport"].append(-wd.transport(k))
            terms["quantum"].append(wd.quantum_force(k))
            inter = _inter_potential(g_np1, rho_np1, potential, n, k)
            terms["inter_potential"].append(-_safe_divide(inter, f.rho, mask))
            terms["external"].append(-trap_omega**2 * gn.coordinate(k) * np.ones(gn.shape))
        terms = {k: np.where(mask[None], 0.0, np.stack(v)) for k, v in terms.items()}
        r = np.where(mask[None], 0.0, lhs - sum(terms.values()))
        acc += h * quadrature(gn, weight * np.sum(r**2, axis=0))
        lhs_acc += h * quadrature(gn, weight * np.sum(np.where(mask[None], 0.0, lhs) ** 2, axis=0))
        for name, arr in terms.items():
            term_acc[name] = term_acc.get(name, 0.0) + h * quadrature(gn, weight * np.sum(arr**2, axis=0))
    terms_out = {"dt_v": float(np.sqrt(lhs_acc))} | {k: float(np.sqrt(v)) for k, v in term_acc.items()}
    scale = max(terms_out.values())
    res = float(np.sqrt(acc))
    return HierarchyReport(
        -1, n, res, terms_out, res / scale if scale > 0 else 0.0,
        grid={"box_length": grid1.box_length, "points_per_axis": grid1.points_per_axis, "total_dims": n},
        dt=h,
    )


def finite_energy_value(fields) -> float:
    """``int (|grad sqrt(rho)|^2 + |v sqrt(rho)|^2) dx = int (|u|^2 + |v|^2) rho dx``."""
    return float(quadrature(fields.grid, np.sum(fields.u**2 + fields.v**2, axis=0) * fields.rho))


@dataclass
class MarginalBounds:
    u_norm: float
    v_norm: float
    grad_psi_norm: float

    @property
    def u_slack(self) -> float:
        return self.grad_psi_norm - self.u_norm

    @property
    def v_slack(self) -> float:
        return self.grad_psi_norm - self.v_norm

    @property
    def holds(self) -> bool:
        return self.u_slack >= 0 and self.v_slack >= 0


def marginal_bounds(fields: MadelungFields, n: int) -> MarginalBounds:
    """``L^2(rho_{N,n})`` norms of ``u_{N,n}``, ``v_{N,n}`` against ``||grad Psi_N||``."""
    if fields.psi is None:
        raise ValueError("marginal_bounds needs the wavefunction")
    marg = marginalize(fields, n, max_mask_mass=np.inf)
    g = fields.grid
    grad2 = sum(np.abs(spectral_gradient(g, fields.psi, a)) ** 2 for a in range(g.total_dims))
    un = np.sqrt(quadrature(marg.grid, np.sum(marg.u**2, axis=0) * marg.rho))
    vn = np.sqrt(quadrature(marg.grid, np.sum(marg.v**2, axis=0) * marg.rho))
    return MarginalBounds(float(un), float(vn), float(np.sqrt(quadrature(g, grad2))))


def curl_2d(fields: MadelungFields, bulk: float = 1e-6) -> float:
    """Max of ``|d_0 v_1 - d_1 v_0|`` where ``rho > bulk * max``, from spectral derivatives of ``j`` and ``rho``."""
    g = fields.grid
    if g.total_dims < 2:
        raise GridError("curl needs at least two axes")
    keep = fields.rho > bulk * fields.rho.max()
    rho = np.where(keep, fields.rho, 1.0)
    d0 = lambda f: spectral_gradient(g, f, 0)
    d1 = lambda f: spectral_gradient(g, f, 1)
    dv1 = (d0(fields.j[1]) - fields.v[1] * d0(fields.rho)) / rho
    dv0 = (d1(fields.j[0]) - fields.v[0] * d1(fields.rho)) / rho
    return float(np.max(np.abs(np.where(keep, dv1 - dv0, 0.0))))
