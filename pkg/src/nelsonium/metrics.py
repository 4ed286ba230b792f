"""Distances between laws and the path-law comparison used in convergence studies."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import wasserstein_distance

from .grid import Grid, quadrature
from .probes import PROBE_BATTERY_ID, probe_at, probe_battery

N_ERROR_BATCHES = 8


def w1_distance(samples_a, samples_b) -> float:
    """Exact 1-D Wasserstein-1 distance between two empirical measures.

    Equal sizes use the mean absolute gap of order statistics; unequal
    sizes fall back to the CDF integral.
    """
    a = np.sort(np.asarray(samples_a, dtype=float).ravel())
    b = np.sort(np.asarray(samples_b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("w1_distance needs nonempty samples")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    return float(wasserstein_distance(a, b))


def w1_with_error(samples_a, samples_b, batches: int = N_ERROR_BATCHES) -> tuple[float, float]:
    """W1 on the full samples plus a spread estimate from contiguous batches.

    The error bar is the standard deviation of per-batch W1 values divided
    by ``sqrt(batches)``.
    """
    a = np.asarray(samples_a, dtype=float).ravel()
    b = np.asarray(samples_b, dtype=float).ravel()
    full = w1_distance(a, b)
    na, nb = a.size // batches, b.size // batches
    vals = [w1_distance(a[i * na:(i + 1) * na], b[i * nb:(i + 1) * nb]) for i in range(batches)]
    return full, float(np.std(vals, ddof=1) / np.sqrt(batches))


def w1_to_density(samples, grid: Grid, density: np.ndarray) -> float:
    """W1 between samples and a 1-D grid density (piecewise-linear CDF)."""
    if grid.total_dims != 1:
        raise ValueError("w1_to_density needs a one-axis grid")
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    x = grid.nodes
    dx = grid.spacing
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (density[:-1] + density[1:]) * dx)])
    cdf = cdf / cdf[-1]
    lo = min(x[0], s[0])
    hi = max(x[-1], s[-1])
    pts = np.union1d(np.linspace(lo, hi, 8 * len(x) + 1), s)
    F_ref = np.interp(pts, x, cdf, left=0.0, right=1.0)
    F_emp = np.searchsorted(s, pts, side="right") / s.size
    return float(np.trapezoid(np.abs(F_emp - F_ref), pts))


def w1_between_densities(grid: Grid, rho_a: np.ndarray, rho_b: np.ndarray) -> float:
    """``int |F_a - F_b| dx`` for two 1-D grid densities."""
    if grid.total_dims != 1:
        raise ValueError("needs a one-axis grid")
    Fa = np.cumsum(rho_a) * grid.spacing
    Fb = np.cumsum(rho_b) * grid.spacing
    return float(np.sum(np.abs(Fa - Fb)) * grid.spacing)


def bounded_lipschitz_distance(grid: Grid, field_a: np.ndarray, field_b: np.ndarray, vector: bool = False) -> float:
    """Max over the probe battery of ``|int phi (a - b)|``.

    With ``vector`` the fields are current densities ``(D,) + shape`` and
    the probes are the battery gradients (``int grad phi . (j_a - j_b)``).
    """
    field_a = np.asarray(field_a)
    field_b = np.asarray(field_b)
    if field_a.shape != field_b.shape:
        raise ValueError(f"grid mismatch: {field_a.shape} vs {field_b.shape}")
    grid.check_field(field_a, vector=vector)
    diff = field_a - field_b
    vals = []
    for _, phi, dphi in probe_battery(grid):
        integrand = np.sum(dphi * diff, axis=0) if vector else phi * diff
        vals.append(abs(quadrature(grid, integrand)))
    return float(max(vals))


@dataclass
class PathLawReport:
    times: list[float]
    w1: list[float]
    w1_se: list[float]
    functional_gaps: dict[str, float]
    functional_se: dict[str, float]
    probe_battery: str = PROBE_BATTERY_ID

    @property
    def max_functional_gap(self) -> float:
        return max(self.functional_gaps.values())

    def to_dict(self) -> dict:
        return asdict(self)


def _ito_functionals(paths: np.ndarray, box_length: float) -> dict[str, np.ndarray]:
    """Per-path ``int grad phi(X_t) . dX_t`` on the recorded lattice (left-point sums)."""
    K, R, D = paths.shape
    out: dict[str, np.ndarray] = {}
    for r in range(R - 1):
        inc = paths[:, r + 1] - paths[:, r]
        for name, _, grad in probe_at(box_length, paths[:, r]):
            out[name] = out.get(name, 0.0) + np.sum(grad * inc, axis=1)
    return out


def path_law_consistency(ens_a, ens_b, subset=(0,), probe_box: float | None = None) -> PathLawReport:
    """Compare two path ensembles on ``{0, T/4, T/2, T}`` and through Ito probe functionals.

    Per-time W1 uses particle ``subset[0]``; functionals use the unwrapped
    coordinates in ``subset``.  Standard errors treat the two ensembles as
    independent, or as paired when they share the seed and size (common
    random numbers).  ``probe_box`` sets the probe battery scale when the
    ensembles are not periodic.
    """
    Ta, Tb = ens_a.record_times[-1], ens_b.record_times[-1]
    if abs(Ta - Tb) > 1e-12 or abs(ens_a.dt - ens_b.dt) > 1e-15:
        raise ValueError(f"mismatched horizons: T={Ta} vs {Tb}, dt={ens_a.dt} vs {ens_b.dt}")
    if not np.allclose(ens_a.record_times, ens_b.record_times):
        raise ValueError("ensembles recorded on different time lattices")
    T = Ta
    times = [0.0, T / 4, T / 2, T]
    w1s, ses = [], []
    col = subset[0]
    for t in times:
        w, se = w1_with_error(ens_a.positions_at(t)[:, col], ens_b.positions_at(t)[:, col])
        w1s.append(w)
        ses.append(se)
    L = probe_box or ens_a.box_length or ens_b.box_length
    if L is None:
        raise ValueError("unbounded ensembles need probe_box to scale the probe battery")
    fa = _ito_functionals(ens_a.unwrapped()[:, :, list(subset)], L)
    fb = _ito_functionals(ens_b.unwrapped()[:, :, list(subset)], L)
    paired = ens_a.seed == ens_b.seed and ens_a.K == ens_b.K
    gaps, fses = {}, {}
    for name in fa:
        a, b = fa[name], fb[name]
        gaps[name] = float(abs(a.mean() - b.mean()))
        if paired:
            fses[name] = float(np.std(a - b, ddof=1) / np.sqrt(a.size))
        else:
            fses[name] = float(np.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size))
    return PathLawReport([float(t) for t in times], w1s, ses, gaps, fses)
