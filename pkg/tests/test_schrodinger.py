import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nelsonium.grid import build_grid, GridError, quadrature
from nelsonium.potentials import (
    PairPotential, assemble_nbody_potential, nbody_potential_gradient, kernel,
)
from nelsonium.schrodinger import (
    ConservationError, SchrodingerProblem, evolve, exchange_residual, gaussian_packet,
    lattice, norm, normalize, step_strang,
)
from nelsonium.grid import spectral_gradient


@pytest.mark.parametrize("kind", ["gaussian_bump", "cosine_bounded", "quadratic_oracle", "constant"])
def test_pair_potential_derivative_matches_finite_difference(kind):
    pot = PairPotential(kind, 0.7, 2.0)
    r = np.linspace(-3, 3, 13)
    h = 1e-6
    fd = (pot(r + h) - pot(r - h)) / (2 * h)
    assert np.allclose(pot.derivative(r), fd, atol=1e-7)


def test_pair_potential_rejects_unknown_kind():
    with pytest.raises(ValueError):
        PairPotential("yukawa", 1.0)


def test_quadratic_potential_flagged_unbounded():
    assert not PairPotential("quadratic_oracle", 1.0).bounded
    assert PairPotential("gaussian_bump", 1.0).bounded


def test_nbody_potential_constant_pairs_scaling():
    g = build_grid(4, 8, 3)
    W = assemble_nbody_potential(g, PairPotential("constant", 2.0), 3)
    assert np.allclose(W, 2.0 * 3 / 3)


def test_nbody_gradient_matches_spectral():
    g = build_grid(16, 64, 2)
    pot = PairPotential("cosine_bounded", 1.0, 8.0)
    W = assemble_nbody_potential(g, pot, 2, trap_omega=0.0)
    grad = nbody_potential_gradient(g, pot, 2)
    for a in range(2):
        assert np.allclose(grad[a], spectral_gradient(g, W, a), atol=1e-10)


def test_nbody_potential_dimension_check():
    with pytest.raises(GridError):
        assemble_nbody_potential(build_grid(4, 8, 2), PairPotential("constant", 1.0), 3)


def _hartree(dt=1e-3, T=0.2, M=128, g=0.5):
    grid = build_grid(20, M, 1)
    return SchrodingerProblem(grid, 1, PairPotential("gaussian_bump", g, 1.0), "hartree", dt, T)


def test_plane_wave_free_evolution_exact():
    grid = build_grid(2 * np.pi, 32, 1)
    k = 3.0
    psi0 = normalize(grid, np.exp(1j * k * grid.nodes))
    prob = SchrodingerProblem(grid, 1, PairPotential("constant", 0.0), "linear_nbody", 0.01, 0.5)
    ev = evolve(prob, psi0, [0.5])
    assert np.allclose(ev.states[-1], psi0 * np.exp(-0.5j * k**2 * 0.5), atol=1e-12)


def test_free_gaussian_spreads_as_analytic():
    grid = build_grid(40, 256, 1)
    prob = SchrodingerProblem(grid, 1, PairPotential("constant", 0.0), "linear_nbody", 0.01, 1.0)
    ev = evolve(prob, gaussian_packet(grid, 1.0), [1.0])
    rho = np.abs(ev.states[-1]) ** 2
    var = quadrature(grid, grid.nodes**2 * rho)
    # sigma^2 (1 + t^2 / (4 sigma^4)) for a minimum-uncertainty packet
    assert var == pytest.approx(1.25, rel=1e-10)


def test_harmonic_ground_state_is_stationary():
    grid = build_grid(20, 128, 1)
    psi0 = gaussian_packet(grid, np.sqrt(0.5))
    prob = SchrodingerProblem(grid, 1, PairPotential("constant", 0.0), "linear_nbody", 5e-4, 1.0, trap_omega=1.0)
    ev = evolve(prob, psi0, [1.0])
    assert np.max(np.abs(np.abs(ev.states[-1]) ** 2 - np.abs(psi0) ** 2)) <= 1e-7


def test_hartree_conserves_norm_and_energy():
    prob = _hartree(T=0.5)
    ev = evolve(prob, gaussian_packet(prob.grid, 1.0, momentum=1.0), lattice(prob, 50))
    assert ev.max_norm_drift <= 1e-12
    assert ev.max_energy_drift <= 1e-6


def test_strang_is_second_order_in_time():
    # the free Gaussian is split exactly, so use the trapped Hartree flow
    grid = build_grid(20, 128, 1)
    psi0 = gaussian_packet(grid, 1.0, 0.5, 0.5)
    ref_prob = SchrodingerProblem(grid, 1, PairPotential("gaussian_bump", 1.0), "hartree", 1.25e-4, 0.5, trap_omega=1.0)
    ref = evolve(ref_prob, psi0, [0.5]).states[-1]
    errs = []
    for dt in (4e-3, 2e-3, 1e-3):
        p = SchrodingerProblem(grid, 1, PairPotential("gaussian_bump", 1.0), "hartree", dt, 0.5, trap_omega=1.0)
        errs.append(np.max(np.abs(evolve(p, psi0, [0.5]).states[-1] - ref)))
    ratios = [errs[i] / errs[i + 1] for i in range(2)]
    assert all(3.5 < r < 4.5 for r in ratios), ratios


def test_linear_nbody_preserves_exchange_symmetry():
    grid = build_grid(16, 64, 2)
    x, y = grid.coordinate(0), grid.coordinate(1)
    psi0 = normalize(grid, np.exp(-(x**2 + y**2) / 4 - 0.3 * (x - y) ** 2) + 0j)
    prob = SchrodingerProblem(grid, 2, PairPotential("cosine_bounded", 1.0, 8.0), "linear_nbody", 2e-3, 0.2)
    ev = evolve(prob, psi0, [0.2])
    assert exchange_residual(ev.states[-1]) <= 1e-12


def test_evolve_rejects_unnormalized():
    prob = _hartree()
    with pytest.raises(ValueError, match="normalized"):
        evolve(prob, 2 * gaussian_packet(prob.grid), [0.1])


def test_evolve_rejects_off_lattice_times():
    prob = _hartree()
    with pytest.raises(ValueError, match="lattice"):
        evolve(prob, gaussian_packet(prob.grid), [0.00015])


def test_evolve_flags_conservation_breach():
    grid = build_grid(20, 64, 1)
    # a coarse step with a strong trap breaks the tight energy tolerance
    prob = SchrodingerProblem(grid, 1, PairPotential("gaussian_bump", 5.0), "hartree", 0.2, 1.0,
                              trap_omega=3.0, energy_tol=1e-12)
    with pytest.raises(ConservationError) as info:
        evolve(prob, gaussian_packet(grid, 0.5, 2.0), lattice(prob))
    assert info.value.time > 0


def test_step_rejects_nonfinite():
    prob = _hartree()
    psi = gaussian_packet(prob.grid)
    psi[3] = np.nan
    with pytest.raises(FloatingPointError):
        step_strang(prob, psi)


def test_problem_validates_mode_dimensions():
    with pytest.raises(GridError):
        SchrodingerProblem(build_grid(4, 8, 2), 1, PairPotential("constant", 0.0), "hartree")
    with pytest.raises(GridError):
        SchrodingerProblem(build_grid(4, 8, 1), 2, PairPotential("constant", 0.0), "linear_nbody")
    with pytest.raises(ValueError):
        SchrodingerProblem(build_grid(4, 8, 1), 1, PairPotential("constant", 0.0), "gpe")


@settings(max_examples=10, deadline=None)
@given(st.floats(0.0, 2.0), st.floats(-1.0, 1.0))
def test_norm_conserved_for_any_coupling(amplitude, momentum):
    grid = build_grid(20, 64, 1)
    prob = SchrodingerProblem(grid, 1, PairPotential("gaussian_bump", amplitude), "hartree", 5e-3, 0.1)
    ev = evolve(prob, gaussian_packet(grid, 1.0, 0.0, momentum), [0.1], check=False)
    assert abs(norm(grid, ev.states[-1]) - 1) <= 1e-12
