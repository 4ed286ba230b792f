"""Closed-form Gaussian dynamics for a harmonic trap plus quadratic pair coupling.

The N-body Hamiltonian is

    sum_j p_j^2/2 + omega^2 x_j^2/2 + (g/N) sum_{j<k} (x_j - x_k)^2,

whose force matrix is ``omega^2 P + Omega^2 Q`` with ``P = 11^T/N``,
``Q = I - P`` and ``Omega^2 = omega^2 + 2g``.  A pure Gaussian state

    psi ~ exp(-(x-m)^T S^-1 (x-m)/4 + i (x-m)^T B (x-m)/2 + i pbar.(x-m))

has Wigner covariance ``[[S, S B], [B S, B S B + S^-1/4]]``; for a quadratic
Hamiltonian that covariance and the mean are transported by the classical
flow, which is available mode by mode in closed form.

The quadratic potential is unbounded, so every result here sits outside
the bounded-interaction setting the limit theorems assume; reports carry
:data:`OUTSIDE_HYPOTHESES`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm as _normal

from .grid import Grid

OUTSIDE_HYPOTHESES = "quadratic pair potential is unbounded: outside the bounded-V hypotheses"


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianState:
    """Pure Gaussian N-body state at time ``t``.

    ``phase_curvature`` is ``B`` so that ``v(x) = B (x - mean) + momentum``
    and ``u(x) = -S^-1 (x - mean) / 2``.
    """

    t: float
    mean: np.ndarray
    covariance: np.ndarray
    phase_curvature: np.ndarray
    momentum: np.ndarray

    @property
    def N(self) -> int:
        return len(self.mean)

    @property
    def momentum_covariance(self) -> np.ndarray:
        S, B = self.covariance, self.phase_curvature
        return B @ S @ B + 0.25 * np.linalg.inv(S)

    @property
    def drift_matrix(self) -> np.ndarray:
        """``A`` with ``b(x) = A (x - mean) + momentum``."""
        return -0.5 * np.linalg.inv(self.covariance) + self.phase_curvature

    def osmotic(self, x: np.ndarray) -> np.ndarray:
        """``u`` at points ``x`` of shape ``(K, N)``."""
        return -0.5 * (np.atleast_2d(x) - self.mean) @ np.linalg.inv(self.covariance).T

    def current(self, x: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(x) - self.mean) @ self.phase_curvature.T + self.momentum

    def to_dict(self) -> dict:
        return {
            "t": self.t, "mean": self.mean.tolist(), "covariance": self.covariance.tolist(),
            "phase_curvature": self.phase_curvature.tolist(), "momentum": self.momentum.tolist(),
            "flag": OUTSIDE_HYPOTHESES,
        }


def _check_spd(S: np.ndarray) -> None:
    if not np.allclose(S, S.T, atol=1e-12 * max(1.0, np.abs(S).max())):
        raise OracleError("covariance is not symmetric")
    if np.linalg.eigvalsh(S).min() <= 0:
        raise OracleError("covariance is not positive definite")


def product_state(N: int, mean: float = 0.0, variance: float = 0.5, curvature: float = 0.0, momentum: float = 0.0) -> GaussianState:
    """Identical uncorrelated one-body Gaussians."""
    return GaussianState(
        0.0, np.full(N, float(mean)), variance * np.eye(N), curvature * np.eye(N), np.full(N, float(momentum)),
    )


@dataclass(frozen=True)
class QuadraticModel:
    N: int
    trap_omega: float
    coupling_g: float
    initial: GaussianState

    def __post_init__(self):
        if self.N < 1:
            raise OracleError("N must be >= 1")
        if self.trap_omega < 0:
            raise OracleError("trap_omega must be >= 0")
        if self.initial.N != self.N:
            raise OracleError(f"initial state has {self.initial.N} particles, model has {self.N}")
        _check_spd(self.initial.covariance)
        if self.N > 1 and self.relative_frequency_sq < 0:
            raise OracleError(
                f"relative-mode frequency squared {self.relative_frequency_sq:.3g} < 0: unstable coupling"
            )

    @property
    def relative_frequency_sq(self) -> float:
        return self.trap_omega**2 + 2.0 * self.coupling_g

    @property
    def relative_frequency(self) -> float:
        return float(np.sqrt(self.relative_frequency_sq))

    @property
    def projectors(self) -> tuple[np.ndarray, np.ndarray]:
        P = np.full((self.N, self.N), 1.0 / self.N)
        return P, np.eye(self.N) - P

    @classmethod
    def ground_state(cls, N: int, trap_omega: float, coupling_g: float) -> "QuadraticModel":
        """Model started in its (entangled for ``g != 0``) ground state."""
        if trap_omega <= 0:
            raise OracleError("ground state needs trap_omega > 0")
        P = np.full((N, N), 1.0 / N)
        Q = np.eye(N) - P
        Om = np.sqrt(trap_omega**2 + 2 * coupling_g)
        S = P / (2 * trap_omega) + (Q / (2 * Om) if N > 1 else 0.0)
        return cls(N, trap_omega, coupling_g, GaussianState(0.0, np.zeros(N), S, np.zeros((N, N)), np.zeros(N)))


def _mode_flow(lam: float, t: float) -> tuple[float, float, float]:
    """``cos(lam t)``, ``sin(lam t)/lam`` and ``-lam sin(lam t)`` with the ``lam -> 0`` limit."""
    c = np.cos(lam * t)
    s_over = t if lam == 0 else np.sin(lam * t) / lam
    return c, s_over, -lam * np.sin(lam * t)


def flow_matrix(model: QuadraticModel, t: float) -> np.ndarray:
    """Classical phase-space flow ``(x, p) -> Phi (x, p)`` over time ``t``."""
    P, Q = model.projectors
    blocks = [np.zeros((model.N, model.N)) for _ in range(4)]
    modes = [(model.trap_omega, P)]
    if model.N > 1:
        modes.append((model.relative_frequency, Q))
    for lam, proj in modes:
        c, s_over, ms = _mode_flow(lam, t)
        blocks[0] += c * proj
        blocks[1] += s_over * proj
        blocks[2] += ms * proj
        blocks[3] += c * proj
    return np.block([[blocks[0], blocks[1]], [blocks[2], blocks[3]]])


def _evolve(state: GaussianState, Phi: np.ndarray, t: float) -> GaussianState:
    N = state.N
    S, B = state.covariance, state.phase_curvature
    C = S @ B
    W = np.block([[S, C], [C.T, state.momentum_covariance]])
    W = Phi @ W @ Phi.T
    mp = Phi @ np.concatenate([state.mean, state.momentum])
    S_t = 0.5 * (W[:N, :N] + W[:N, :N].T)
    B_t = np.linalg.solve(S_t, W[:N, N:])
    B_t = 0.5 * (B_t + B_t.T)
    return GaussianState(t, mp[:N], S_t, B_t, mp[N:])


def solve_quadratic(model: QuadraticModel, times) -> list[GaussianState]:
    """Exact states at ``times`` (measured from the model's initial state)."""
    return [_evolve(model.initial, flow_matrix(model, float(t)), float(t)) for t in times]


@dataclass(frozen=True)
class GaussianMarginal:
    """Law of the first ``n`` coordinates with its conditioned Madelung fields.

    ``u_{N,n}(x) = -S^-1 (x - mean)/2`` and
    ``v_{N,n}(x) = G (x - mean) + momentum``.
    """

    mean: np.ndarray
    covariance: np.ndarray
    velocity_gradient: np.ndarray
    momentum: np.ndarray

    @property
    def drift_matrix(self) -> np.ndarray:
        return -0.5 * np.linalg.inv(self.covariance) + self.velocity_gradient

    def drift(self, x: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(x) - self.mean) @ self.drift_matrix.T + self.momentum


def exact_marginal(state: GaussianState, n: int) -> GaussianMarginal:
    """Marginal of the first ``n`` particles.

    ``v_{N,n} = E[v_N | x_1..x_n]``, giving ``G = (B S)_{nn} S_{nn}^-1``.
    """
    if not 1 <= n <= state.N:
        raise OracleError(f"need 1 <= n <= N, got {n}")
    S = state.covariance
    Snn = S[:n, :n]
    G = (state.phase_curvature @ S)[:n, :n] @ np.linalg.inv(Snn)
    return GaussianMarginal(state.mean[:n].copy(), Snn.copy(), G, state.momentum[:n].copy())


@dataclass(frozen=True)
class HartreeLimit:
    """Self-consistent one-body Gaussian flow of the mean-field equation.

    With ``V * rho = g ((x - m)^2 + s)`` the mean moves at the trap frequency
    and the width at ``Omega``.
    """

    model: QuadraticModel

    def states(self, times) -> list[GaussianState]:
        m = self.model
        init = m.initial
        one = GaussianState(
            0.0, init.mean[:1].copy(), init.covariance[:1, :1].copy(),
            init.phase_curvature[:1, :1].copy(), init.momentum[:1].copy(),
        )
        if m.N > 1 and not (
            np.allclose(init.covariance, init.covariance[0, 0] * np.eye(m.N))
            and np.allclose(init.phase_curvature, init.phase_curvature[0, 0] * np.eye(m.N))
            and np.allclose(init.mean, init.mean[0]) and np.allclose(init.momentum, init.momentum[0])
        ):
            raise OracleError("the mean-field limit needs an identical product initial state")
        out = []
        for t in times:
            c0, s0, m0 = _mode_flow(m.trap_omega, t)
            cW, sW, mW = _mode_flow(np.sqrt(m.relative_frequency_sq), t)
            mean_phi = np.array([[c0, s0], [m0, c0]])
            width_phi = np.array([[cW, sW], [mW, cW]])
            S, B = one.covariance[0, 0], one.phase_curvature[0, 0]
            W = np.array([[S, S * B], [S * B, B * S * B + 0.25 / S]])
            W = width_phi @ W @ width_phi.T
            mp = mean_phi @ np.array([one.mean[0], one.momentum[0]])
            out.append(GaussianState(
                float(t), np.array([mp[0]]), np.array([[W[0, 0]]]),
                np.array([[W[0, 1] / W[0, 0]]]), np.array([mp[1]]),
            ))
        return out

    def fixed_point(self) -> GaussianState:
        """Stationary self-consistent state: centred, variance ``1/(2 Omega)``, no phase."""
        Om = np.sqrt(self.model.relative_frequency_sq)
        if Om == 0:
            raise OracleError("no normalizable fixed point without confinement")
        return GaussianState(0.0, np.zeros(1), np.array([[0.5 / Om]]), np.zeros((1, 1)), np.zeros(1))


def hartree_limit(model: QuadraticModel) -> HartreeLimit:
    return HartreeLimit(model)


@dataclass
class GaussianThermo:
    entropy: float
    kinetic: float
    potential: float

    @property
    def total(self) -> float:
        return self.kinetic + self.potential


def gaussian_entropy(covariance: np.ndarray) -> float:
    """``int rho log rho = -log((2 pi e)^k det S) / 2`` for a Gaussian density."""
    S = np.atleast_2d(covariance)
    _check_spd(S)
    k = S.shape[0]
    sign, logdet = np.linalg.slogdet(S)
    return float(-0.5 * (k * np.log(2 * np.pi * np.e) + logdet))


def exact_entropy_energy(state: GaussianState, model: QuadraticModel | None = None, hartree: bool = False) -> GaussianThermo:
    """Boltzmann entropy, kinetic energy and potential energy of a Gaussian state.

    With ``hartree`` the state is one-body and the interaction uses the
    Hamiltonian convention ``(1/2) int int rho V rho = g s``.
    """
    H = gaussian_entropy(state.covariance)
    K = 0.5 * (np.trace(state.momentum_covariance) + state.momentum @ state.momentum)
    if model is None:
        return GaussianThermo(H, float(K), 0.0)
    S, m = state.covariance, state.mean
    trap = 0.5 * model.trap_omega**2 * (np.trace(S) + m @ m)
    if hartree:
        return GaussianThermo(H, float(K), float(trap + model.coupling_g * S[0, 0]))
    N = state.N
    diag = np.diag(S)
    pair = 0.0
    for j in range(N):
        for k in range(j + 1, N):
            pair += diag[j] + diag[k] - 2 * S[j, k] + (m[j] - m[k]) ** 2
    return GaussianThermo(H, float(K), float(trap + model.coupling_g * pair / N))


def render(grid: Grid, state: GaussianState) -> np.ndarray:
    """Sample the wavefunction on a grid with ``D = N`` (unit norm in the continuum)."""
    if grid.total_dims != state.N:
        raise OracleError(f"grid has D={grid.total_dims}, state has N={state.N}")
    N = state.N
    dx = [grid.coordinate(a) - state.mean[a] for a in range(N)]
    Sinv = np.linalg.inv(state.covariance)
    quad = np.zeros(grid.shape)
    phase = np.zeros(grid.shape)
    for a in range(N):
        for b in range(N):
            quad = quad + Sinv[a, b] * dx[a] * dx[b]
            phase = phase + state.phase_curvature[a, b] * dx[a] * dx[b]
    phase = 0.5 * phase + sum(state.momentum[a] * dx[a] for a in range(N))
    _, logdet = np.linalg.slogdet(state.covariance)
    amp = np.exp(-0.25 * quad - 0.25 * (N * np.log(2 * np.pi) + logdet))
    return amp * np.exp(1j * phase)


def density_on_grid(grid: Grid, state: GaussianState) -> np.ndarray:
    return np.abs(render(grid, state)) ** 2


def gaussian_w1(mean_a: float, sd_a: float, mean_b: float, sd_b: float) -> float:
    """W1 between two 1-D Gaussians via the quantile coupling, ``E|a + b Z|``."""
    a = mean_a - mean_b
    b = abs(sd_a - sd_b)
    if b == 0:
        return abs(a)
    return float(b * np.sqrt(2 / np.pi) * np.exp(-0.5 * (a / b) ** 2) + a * (1 - 2 * _normal.cdf(-a / b)))


def conditioned_jensen_gap(state: GaussianState, n: int = 1) -> float:
    """``E|b_N^{(1..n)}|^2 - E|b_{N,n}|^2``: the Jensen gap of conditioning on the first ``n`` coordinates."""
    A = state.drift_matrix
    S = state.covariance
    full = np.trace(A[:n] @ S @ A[:n].T)
    marg = exact_marginal(state, n)
    Am = marg.drift_matrix
    cond = np.trace(Am @ marg.covariance @ Am.T)
    return float(full - cond)


def drift_energies(state: GaussianState, n: int = 1) -> tuple[float, float]:
    """``(E|b_N^{(1..n)}|^2, E|b_{N,n}|^2)`` at one time."""
    A = state.drift_matrix
    S = state.covariance
    p = state.momentum[:n]
    full = np.trace(A[:n] @ S @ A[:n].T) + p @ p
    marg = exact_marginal(state, n)
    Am = marg.drift_matrix
    cond = np.trace(Am @ marg.covariance @ Am.T) + p @ p
    return float(full), float(cond)


@dataclass
class MeanFieldSweep:
    N: list[int]
    w1: list[float]
    kinetic_error: list[float]
    potential_error: list[float]
    ratios: list[float] = field(default_factory=list)
    flag: str = OUTSIDE_HYPOTHESES


def mean_field_sweep(N_list, trap_omega: float, coupling_g: float, t: float, variance: float = 0.5,
                     curvature: float = 0.0, mean: float = 0.0, momentum: float = 0.0) -> MeanFieldSweep:
    """W1 and per-particle energy gaps between the N-body 1-marginal and the mean-field limit at time ``t``."""
    w1s, kerr, verr = [], [], []
    for N in N_list:
        model = QuadraticModel(N, trap_omega, coupling_g, product_state(N, mean, variance, curvature, momentum))
        st = solve_quadratic(model, [t])[0]
        lim = hartree_limit(model).states([t])[0]
        marg = exact_marginal(st, 1)
        w1s.append(gaussian_w1(marg.mean[0], np.sqrt(marg.covariance[0, 0]), lim.mean[0], np.sqrt(lim.covariance[0, 0])))
        th_N = exact_entropy_energy(st, model)
        th_inf = exact_entropy_energy(lim, model, hartree=True)
        kerr.append(abs(th_N.kinetic / N - th_inf.kinetic))
        verr.append(abs(th_N.potential / N - th_inf.potential))
    ratios = [w1s[i + 1] / w1s[i] for i in range(len(w1s) - 1)]
    return MeanFieldSweep(list(N_list), w1s, kerr, verr, ratios)
