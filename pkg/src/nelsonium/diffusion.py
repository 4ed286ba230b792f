"""Euler-Maruyama sampling of Nelson diffusions from gridded or analytic drifts.

Randomness is organised in fixed blocks of paths.  Block ``i`` draws from a
Philox generator seeded by ``SeedSequence(seed, spawn_key=(i,))``, so the
ensemble depends only on ``(seed, block_size)`` and never on how blocks are
scheduled across worker threads.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import Grid, interpolate, quadrature

log = logging.getLogger(__name__)

PROVENANCES = ("nelson_N", "conditioned_Nn", "limit_hartree", "oracle", "analytic")
DEFAULT_BLOCK = 8192
CLAMP_SCALE = 10.0
INITIAL_STREAM = 2**32 - 1
MIN_ACCEPTANCE = 1e-4


class SamplingError(RuntimeError):
    pass


def _rng(seed: int, key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(key),))))


@dataclass
class DriftTrajectory:
    """Drift fields on a grid at uniformly spaced times, linearly interpolated in time.

    ``drifts`` has shape ``(S, D) + grid.shape``.
    """

    grid: Grid
    times: np.ndarray
    drifts: np.ndarray
    provenance: str
    label: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.drifts = np.asarray(self.drifts, dtype=float)
        if self.provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}")
        if self.drifts.shape != (len(self.times), self.grid.total_dims) + self.grid.shape:
            raise ValueError(f"drift array shape {self.drifts.shape} does not match times/grid")
        if len(self.times) > 1:
            h = np.diff(self.times)
            if np.max(np.abs(h - h[0])) > 1e-9 * h[0] or h[0] <= 0:
                raise ValueError("drift times must be increasing and uniformly spaced")
        if not np.isfinite(self.drifts).all():
            raise FloatingPointError("non-finite drift values")

    @property
    def dims(self) -> int:
        return self.grid.total_dims

    @property
    def box_length(self) -> float | None:
        return self.grid.box_length

    @property
    def spacing(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else np.inf

    @property
    def provenance_id(self) -> str:
        h = hashlib.sha256(self.drifts.tobytes())
        h.update(self.times.tobytes())
        return f"{self.provenance}:{h.hexdigest()[:16]}"

    @classmethod
    def from_fields(cls, times, fields_series, provenance: str = "nelson_N", label: str = "") -> "DriftTrajectory":
        """Drift ``u + v`` from a series of :class:`MadelungFields` or :class:`MarginalSet`."""
        return cls(fields_series[0].grid, times, np.stack([f.u + f.v for f in fields_series]), provenance, label)

    def evaluate(self, x: np.ndarray, t: float) -> np.ndarray:
        t0 = self.times[0]
        if len(self.times) == 1:
            return interpolate(self.grid, self.drifts[0], x)
        s = (t - t0) / self.spacing
        if s < -1e-9 or s > len(self.times) - 1 + 1e-9:
            raise ValueError(f"time {t} outside drift trajectory [{t0}, {self.times[-1]}]")
        i = int(np.clip(np.floor(s + 1e-9), 0, len(self.times) - 2))
        frac = s - i
        out = interpolate(self.grid, self.drifts[i], x)
        if frac > 1e-9:
            out = (1 - frac) * out + frac * interpolate(self.grid, self.drifts[i + 1], x)
        return out


@dataclass
class AnalyticDrift:
    """Drift given by a function ``fn(x (K, D), t) -> (K, D)``.

    ``box_length`` set means positions are wrapped into the periodic box.
    """

    fn: Callable[[np.ndarray, float], np.ndarray]
    dims: int
    provenance: str = "analytic"
    label: str = ""
    box_length: float | None = None
    spacing: float = 0.0

    @property
    def provenance_id(self) -> str:
        return f"{self.provenance}:{self.label}"

    def evaluate(self, x: np.ndarray, t: float) -> np.ndarray:
        return np.asarray(self.fn(x, t), dtype=float)


def zero_drift(dims: int, box_length: float | None = None) -> AnalyticDrift:
    return AnalyticDrift(lambda x, t: np.zeros_like(x), dims, "analytic", "zero", box_length)


@dataclass
class PathEnsemble:
    """Recorded sample paths.

    ``paths`` has shape ``(K, R, D)`` at ``record_times``; positions are
    wrapped into the box when the drift is periodic, and ``winding`` holds
    the net number of box crossings per path and axis.  ``drift_energy`` is
    the per-path trapezoid value of ``int_0^T |b(X_t, t)|^2 dt``.
    """

    paths: np.ndarray
    record_times: np.ndarray
    dt: float
    seed: int
    drift_provenance: str
    drift_id: str
    box_length: float | None = None
    winding: np.ndarray | None = None
    drift_energy: np.ndarray | None = None
    clamp_events: int = 0
    block_size: int = DEFAULT_BLOCK
    metadata: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.paths.shape[0]

    @property
    def dims(self) -> int:
        return self.paths.shape[2]

    def index_of(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.record_times - t)))
        if abs(self.record_times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not a recorded time")
        return i

    def positions_at(self, t: float, subset=None) -> np.ndarray:
        pos = self.paths[:, self.index_of(t), :]
        if subset is not None:
            subset = list(subset)
            if not subset:
                raise ValueError("empty particle subset")
            pos = pos[:, subset]
        return pos

    def unwrapped(self) -> np.ndarray:
        """Continuous paths rebuilt from minimal-image increments between records."""
        if self.box_length is None:
            return self.paths
        L = self.box_length
        inc = np.diff(self.paths, axis=1)
        inc -= L * np.round(inc / L)
        return np.concatenate([self.paths[:, :1], self.paths[:, :1] + np.cumsum(inc, axis=1)], axis=1)

    def summary(self) -> dict:
        return {
            "K": self.K, "dims": self.dims, "dt": self.dt, "seed": self.seed,
            "drift_provenance": self.drift_provenance, "drift_id": self.drift_id,
            "clamp_events": int(self.clamp_events), "block_size": self.block_size,
            "record_times": self.record_times.tolist(),
        }


def _piecewise_linear_axis(rng: np.random.Generator, nodes: np.ndarray, dens: np.ndarray, dx: float, K: int) -> np.ndarray:
    """Exact draws from the periodic piecewise-linear interpolant of node values."""
    a = np.clip(dens, 0.0, None)
    b = np.roll(a, -1)
    mass = 0.5 * (a + b)
    if mass.sum() <= 0:
        raise SamplingError("density has no mass")
    cell = rng.choice(len(nodes), size=K, p=mass / mass.sum())
    u1 = rng.random(K)
    u2 = rng.random(K)
    pa, pb = a[cell], b[cell]
    tot = pa + pb
    # mixture of the falling density 2(1-s) (weight a) and rising density 2s (weight b)
    rising = u1 * tot >= pa
    s = np.where(rising, np.sqrt(u2), 1.0 - np.sqrt(u2))
    return nodes[cell] + s * dx


def _is_product(grid: Grid, rho: np.ndarray) -> tuple[bool, list[np.ndarray]]:
    D = grid.total_dims
    margs = [quadrature(grid, rho, [b for b in range(D) if b != a]) if D > 1 else rho for a in range(D)]
    if D == 1:
        return True, margs
    prod = margs[0]
    for m in margs[1:]:
        prod = np.multiply.outer(prod, m)
    return bool(np.max(np.abs(prod - rho)) <= 1e-12 * rho.max()), margs


def sample_initial(grid: Grid, rho0: np.ndarray, K: int, seed: int, chunk: int = 2**20) -> np.ndarray:
    """Draw ``K`` i.i.d. positions from ``rho0`` (shape ``(K, D)``).

    Product densities are sampled axis by axis from the piecewise-linear
    interpolant; others by rejection against a uniform envelope.
    """
    grid.check_field(rho0)
    if K < 1:
        raise ValueError("K must be >= 1")
    rho0 = np.asarray(rho0, dtype=float)
    mass = quadrature(grid, rho0)
    if abs(mass - 1) > 1e-6:
        raise ValueError(f"rho0 not normalized (mass {mass:.8g})")
    rng = _rng(seed, INITIAL_STREAM)
    product, margs = _is_product(grid, rho0)
    if product:
        cols = [_piecewise_linear_axis(rng, grid.nodes, m, grid.spacing, K) for m in margs]
        return grid.wrap(np.stack(cols, axis=1))

    top = rho0.max()
    rate = 1.0 / (top * grid.box_length**grid.total_dims)
    if rate < MIN_ACCEPTANCE:
        raise SamplingError(
            f"rejection acceptance rate {rate:.2e} below {MIN_ACCEPTANCE:g}; "
            "shrink the box or supply a product initial density"
        )
    out = []
    have = 0
    half = 0.5 * grid.box_length
    while have < K:
        n = min(chunk, int((K - have) / rate * 1.2) + 64)
        prop = rng.uniform(-half, half, size=(n, grid.total_dims))
        keep = rng.random(n) * top < interpolate(grid, rho0, prop)
        out.append(prop[keep])
        have += int(keep.sum())
    return np.concatenate(out)[:K]


def _clamp(b: np.ndarray, bmax: float) -> tuple[np.ndarray, int]:
    mag = np.sqrt(np.sum(b * b, axis=1))
    over = mag > bmax
    if over.any():
        b = b.copy()
        b[over] *= (bmax / mag[over])[:, None]
    return b, int(over.sum())


def _run_block(drift, x0, steps, dt, record_every, rng, noise, bmax):
    x = np.array(x0, dtype=float)
    K, D = x.shape
    L = drift.box_length
    n_rec = steps // record_every + 1
    rec = np.empty((K, n_rec, D))
    rec[:, 0] = x
    winding = np.zeros((K, D), dtype=np.int64)
    energy = np.zeros(K)
    clamps = 0
    sq = np.sqrt(dt)
    b, c = _clamp(drift.evaluate(x, 0.0), bmax)
    clamps += c
    prev_b2 = np.sum(b * b, axis=1)
    for k in range(steps):
        step = b * dt
        if noise:
            step = step + sq * rng.standard_normal((K, D))
        x = x + step
        if L is not None:
            if np.max(np.abs(step)) > 2 * L:
                raise FloatingPointError(f"path escaped more than two boxes in one step at step {k}")
            shift = np.floor((x + 0.5 * L) / L)
            winding += shift.astype(np.int64)
            x = x - L * shift
        if not np.isfinite(x).all():
            raise FloatingPointError(f"non-finite path position at step {k}")
        t = (k + 1) * dt
        b, c = _clamp(drift.evaluate(x, t), bmax)
        clamps += c
        b2 = np.sum(b * b, axis=1)
        energy += 0.5 * dt * (prev_b2 + b2)
        prev_b2 = b2
        if (k + 1) % record_every == 0:
            rec[:, (k + 1) // record_every] = x
    return rec, winding, energy, clamps


def euler_maruyama(
    drift,
    x0: np.ndarray,
    dt: float,
    T: float,
    seed: int,
    record_every: int = 1,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK,
    noise: bool = True,
) -> PathEnsemble:
    """Simulate ``dX = b(X, t) dt + dW`` from ``x0`` (shape ``(K, D)``).

    Parameters
    ----------
    drift : DriftTrajectory or AnalyticDrift
    dt : float
        Step; must divide the drift time spacing and ``T``.
    record_every : int
        Positions are stored every this many steps (``T/dt`` must be a
        multiple of it).
    workers : int
        Threads used to run path blocks; results do not depend on it.
    noise : bool
        Testing hook: ``False`` turns off the Brownian increments.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    K, D = x0.shape
    if D != drift.dims:
        raise ValueError(f"x0 has {D} coordinates, drift has {drift.dims}")
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * T:
        raise ValueError("dt must divide T")
    if drift.spacing and np.isfinite(drift.spacing):
        ratio = drift.spacing / dt
        if abs(ratio - round(ratio)) > 1e-6:
            raise ValueError(f"dt={dt} does not divide the drift spacing {drift.spacing}")
    if steps % record_every:
        raise ValueError("record_every must divide the number of steps")
    if drift.box_length is not None:
        half = 0.5 * drift.box_length
        if np.any(x0 < -half) or np.any(x0 >= half):
            raise ValueError("initial positions outside the periodic box")
    bmax = CLAMP_SCALE / np.sqrt(dt)
    blocks = [(i, slice(s, min(s + block_size, K))) for i, s in enumerate(range(0, K, block_size))]

    def work(item):
        i, sl = item
        return _run_block(drift, x0[sl], steps, dt, record_every, _rng(seed, i), noise, bmax)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(b) for b in blocks]
    clamps = sum(r[3] for r in results)
    if clamps:
        log.warning("drift clamped %d times at |b| = %.3g", clamps, bmax)
    return PathEnsemble(
        paths=np.concatenate([r[0] for r in results]),
        record_times=dt * record_every * np.arange(steps // record_every + 1),
        dt=dt, seed=int(seed), drift_provenance=drift.provenance, drift_id=drift.provenance_id,
        box_length=drift.box_length,
        winding=np.concatenate([r[1] for r in results]),
        drift_energy=np.concatenate([r[2] for r in results]),
        clamp_events=clamps, block_size=block_size,
    )


@dataclass
class EmpiricalMarginal:
    density: np.ndarray
    samples: np.ndarray


def empirical_marginal(ensemble: PathEnsemble, t: float, subset, grid: Grid | None = None) -> EmpiricalMarginal:
    """Histogram on ``grid`` (bins centred at nodes) plus sorted samples at time ``t``.

    For one particle ``samples`` is sorted; for several it is returned
    row-sorted by the first coordinate.
    """
    pos = ensemble.positions_at(t, subset)
    if pos.shape[1] == 1:
        samples = np.sort(pos[:, 0])
    else:
        samples = pos[np.argsort(pos[:, 0], kind="stable")]
    if grid is None:
        return EmpiricalMarginal(np.empty(0), samples)
    g = grid.with_dims(pos.shape[1])
    edges = np.append(g.nodes - 0.5 * g.spacing, g.nodes[-1] + 0.5 * g.spacing)
    wrapped = g.wrap(pos + 0.5 * g.spacing) - 0.5 * g.spacing
    hist, _ = np.histogramdd(wrapped, bins=[edges] * pos.shape[1])
    hist = hist / (pos.shape[0] * g.spacing ** pos.shape[1])
    return EmpiricalMarginal(hist, samples)


_NPE_HEADER = struct.Struct("<4sIQ")
_NPE_SHAPE = struct.Struct("<IIIIdd")


def write_npe1(path, ensemble: PathEnsemble) -> None:
    """Persist the recorded paths: header, then ``K x R x D`` little-endian f64.

    The stored step is the spacing between records.
    """
    K, R, D = ensemble.paths.shape
    spacing = float(ensemble.record_times[1] - ensemble.record_times[0]) if R > 1 else ensemble.dt
    with open(path, "wb") as fh:
        fh.write(_NPE_HEADER.pack(b"NPE1", 1, ensemble.seed & (2**64 - 1)))
        fh.write(_NPE_SHAPE.pack(K, R, D, 0, spacing, ensemble.box_length or 0.0))
        fh.write(np.ascontiguousarray(ensemble.paths, dtype="<f8").tobytes())


def read_npe1(path) -> dict:
    with open(path, "rb") as fh:
        magic, version, seed = _NPE_HEADER.unpack(fh.read(_NPE_HEADER.size))
        if magic != b"NPE1" or version != 1:
            raise ValueError(f"not an NPE1 v1 file: {magic!r} v{version}")
        K, R, D, _, spacing, L = _NPE_SHAPE.unpack(fh.read(_NPE_SHAPE.size))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != K * R * D:
        raise ValueError(f"payload has {data.size} values, header promises {K * R * D}")
    return {"seed": seed, "paths": data.reshape(K, R, D).copy(), "spacing": spacing,
            "box_length": L if L > 0 else None}
