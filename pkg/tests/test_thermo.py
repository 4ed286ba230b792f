import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nelsonium.grid import build_grid
from nelsonium.madelung import extract
from nelsonium.oracle import (
    GaussianState, QuadraticModel, conditioned_jensen_gap, drift_energies, exact_entropy_energy,
    gaussian_entropy, hartree_limit, product_state, render, solve_quadratic,
)
from nelsonium.potentials import PairPotential
from nelsonium.schrodinger import SchrodingerProblem, evolve, gaussian_packet, lattice, normalize
from nelsonium.thermo import (
    CoarseSeriesError, ConventionMismatch, MonotonicityViolation, boltzmann_entropy, energy_report,
    entropy_monotonicity_check, kinetic_convergence_series, kinetic_energy, potential_energy,
    relative_entropy_fields,
)


def entangled_state():
    return GaussianState(
        0.0, np.array([0.3, -0.2]), np.array([[0.8, 0.3], [0.3, 0.8]]),
        np.array([[0.2, 0.1], [0.1, 0.2]]), np.array([0.5, 0.5]),
    )


# energies

def test_kinetic_plane_wave():
    g = build_grid(2 * np.pi, 32, 1)
    k = 3.0
    forms = kinetic_energy(g, psi=np.exp(1j * k * g.nodes) / np.sqrt(g.box_length))
    assert forms.gradient_form == pytest.approx(k**2 / 2, rel=1e-12)
    assert forms.gap <= 1e-10


def test_kinetic_gaussian_ground_state():
    g = build_grid(20, 128, 1)
    psi = np.exp(-g.nodes**2 / 2) / np.pi**0.25 + 0j
    forms = kinetic_energy(g, psi=psi)
    assert forms.gradient_form == pytest.approx(0.25, abs=1e-10)
    assert forms.madelung_form == pytest.approx(0.25, abs=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.5, 2.0), st.floats(-2, 2), st.floats(-2, 2), st.floats(-0.3, 0.3))
def test_kinetic_forms_agree_on_node_free_states(sigma, center, momentum, chirp):
    g = build_grid(24, 256, 1)
    x = g.nodes
    psi = normalize(g, np.exp(-((x - center) ** 2) / (4 * sigma**2) + 1j * (momentum * x + chirp * x**2)))
    assert kinetic_energy(g, psi=psi).relative_gap <= 1e-8


def test_kinetic_matches_oracle():
    g = build_grid(20, 128, 2)
    s = entangled_state()
    forms = kinetic_energy(g, psi=render(g, s))
    assert forms.gradient_form == pytest.approx(exact_entropy_energy(s).kinetic, rel=1e-10)


def test_kinetic_needs_input():
    with pytest.raises(ValueError):
        kinetic_energy(build_grid(1, 8, 1))


@pytest.mark.parametrize("N", [1, 2, 3])
def test_constant_pair_potential_counts_pairs(N):
    g = build_grid(6, 16, N)
    psi = normalize(g, np.ones(g.shape, dtype=complex))
    val = potential_energy(g, psi, PairPotential("constant", 1.7), "linear_nbody")
    assert val == pytest.approx(1.7 * (N - 1) / 2, rel=1e-12)


def test_constant_hartree_conventions():
    g = build_grid(20, 128, 1)
    psi = gaussian_packet(g)
    pot = PairPotential("constant", 1.7)
    assert potential_energy(g, psi, pot, "hartree", convention="paper_literal") == pytest.approx(1.7, rel=1e-10)
    assert potential_energy(g, psi, pot, "hartree") == pytest.approx(0.85, rel=1e-10)


def test_quadratic_pair_energy_matches_oracle():
    g = build_grid(20, 128, 2)
    s = entangled_state()
    model = QuadraticModel(2, 1.0, 0.5, s)
    val = potential_energy(g, render(g, s), PairPotential("quadratic_oracle", 0.5), "linear_nbody", trap_omega=1.0)
    assert val == pytest.approx(exact_entropy_energy(s, model).potential, rel=1e-10)


def test_hartree_energy_matches_fixed_point_oracle():
    model = QuadraticModel(2, 1.0, 0.5, product_state(2))
    fp = hartree_limit(model).fixed_point()
    g = build_grid(20, 256, 1)
    psi = render(g, fp)
    val = potential_energy(g, psi, PairPotential("quadratic_oracle", 0.5), "hartree", trap_omega=1.0)
    assert val == pytest.approx(exact_entropy_energy(fp, model, hartree=True).potential, rel=1e-10)


def test_energy_report_totals():
    g = build_grid(20, 64, 2)
    x, y = g.coordinate(0), g.coordinate(1)
    psi = normalize(g, np.exp(-(x**2 + y**2) / 2 + 0.5j * x) + 0j)
    rep = energy_report(g, psi, PairPotential("gaussian_bump", 1.0), "linear_nbody", t=0.3)
    assert rep.total == rep.kinetic + rep.potential
    assert rep.kinetic >= 0
    assert rep.per_particle["total"] == pytest.approx(rep.total / 2)
    assert json.loads(json.dumps(rep.to_dict()))["convention"] == "hamiltonian"


def test_energy_conserved_over_unit_time():
    g = build_grid(20, 64, 2)
    x, y = g.coordinate(0), g.coordinate(1)
    psi0 = normalize(g, np.exp(-(x**2 + y**2) / 2 - 0.2 * (x - y) ** 2 + 0.5j * (x + y)) + 0j)
    pot = PairPotential("cosine_bounded", 1.0, 8.0)
    prob = SchrodingerProblem(g, 2, pot, "linear_nbody", 2e-3, 1.0)
    ev = evolve(prob, psi0, lattice(prob, 100))
    E = [energy_report(g, p, pot).total for p in ev.states]
    assert max(abs(e - E[0]) for e in E) / abs(E[0]) <= 1e-6


# entropy

def test_entropy_uniform():
    g = build_grid(5, 32, 1)
    H, excl = boltzmann_entropy(g, np.full(32, 0.2))
    assert H == pytest.approx(-np.log(5), rel=1e-14)
    assert excl == 0


@pytest.mark.parametrize("var", [0.3, 1.0, 2.5])
def test_entropy_gaussian(var):
    g = build_grid(30, 256, 1)
    rho = np.exp(-g.nodes**2 / (2 * var)) / np.sqrt(2 * np.pi * var)
    H, _ = boltzmann_entropy(g, rho)
    assert H == pytest.approx(-0.5 * np.log(2 * np.pi * np.e * var), abs=1e-10)
    assert H == pytest.approx(gaussian_entropy(np.array([[var]])), abs=1e-10)


def test_entropy_additive_on_products():
    g1 = build_grid(20, 64, 1)
    rho = np.abs(gaussian_packet(g1, 0.8, 1.0)) ** 2
    H1, _ = boltzmann_entropy(g1, rho)
    H2, _ = boltzmann_entropy(g1.with_dims(2), np.multiply.outer(rho, rho))
    assert abs(H2 - 2 * H1) <= 1e-10


def test_entropy_zero_entries_and_floor():
    g = build_grid(4, 8, 1)
    rho = np.array([0, 0, 0.5, 0.5, 0.5, 0.5, 0, 0.0])
    H, excl = boltzmann_entropy(g, rho)
    assert H == pytest.approx(-np.log(2))
    H, excl = boltzmann_entropy(g, rho, floor=0.6)
    assert H == 0 and excl == pytest.approx(1.0)


def test_entropy_rejects_negative():
    g = build_grid(4, 8, 1)
    rho = np.full(8, 0.25)
    rho[0] = -1e-10
    with pytest.raises(ValueError, match="negative"):
        boltzmann_entropy(g, rho)


def _stationary_series(T=1.0, n=51):
    g = build_grid(20, 128, 1)
    psi = gaussian_packet(g, np.sqrt(0.5))
    times = np.linspace(0, T, n)
    return times, [extract(g, psi * np.exp(-0.5j * t)) for t in times]


def test_relative_entropy_stationary_ou():
    times, fs = _stationary_series()
    rep = relative_entropy_fields(times, fs)
    # b = -x under the ground state, E[x^2] = 1/2
    assert rep.kl_quadrature == pytest.approx(0.25, abs=1e-8)
    assert rep.H0 == pytest.approx(rep.HT, abs=1e-14)
    assert rep.closure_gap <= 1e-8
    assert rep.alternative["convention"] == "paper_literal"


def test_relative_entropy_wiener_uniform():
    g = build_grid(4, 16, 1)
    psi = np.full(16, 0.5, dtype=complex)
    times = np.linspace(0, 1, 5)
    fs = [extract(g, psi) for _ in times]
    for conv in ("half_girsanov", "paper_literal"):
        rep = relative_entropy_fields(times, fs, conv)
        assert rep.kl_quadrature == 0 and rep.closure_gap == 0


@pytest.fixture(scope="module")
def free_packet_series():
    g = build_grid(20, 256, 1)
    prob = SchrodingerProblem(g, 1, PairPotential("constant", 0.0), "linear_nbody", 1e-3, 1.0)
    ev = evolve(prob, gaussian_packet(g, 1.0, 0.0, 0.5), lattice(prob, 2))
    return ev.times, [extract(g, p) for p in ev.states]


def test_relative_entropy_free_packet_conventions(free_packet_series):
    times, fs = free_packet_series
    half = relative_entropy_fields(times, fs, "half_girsanov")
    lit = relative_entropy_fields(times, fs, "paper_literal")
    assert half.closure_gap <= 1e-6
    assert lit.closure_gap > 0.1
    # the literal gap is 2 |H_T - H_0| for a spreading packet
    assert lit.closure_gap == pytest.approx(2 * abs(lit.HT - lit.H0), rel=1e-4)
    assert half.kl_quadrature >= 0
    assert half.alternative["kl"] == pytest.approx(lit.kl_quadrature)


def test_relative_entropy_free_packet_closed_form(free_packet_series):
    times, fs = free_packet_series
    rep = relative_entropy_fields(times, fs)
    times = np.asarray(times)
    # variance s = 1 + t^2/4, u = -y/(2s), v = 0.5 + t y/(4s) with y = x - mean
    s = 1 + times**2 / 4
    e_b2 = 1 / (4 * s) + times**2 / (16 * s) - times / (4 * s) + 0.25
    assert rep.kl_quadrature == pytest.approx(0.5 * np.trapezoid(e_b2, times), rel=1e-6)


def test_relative_entropy_rejects_coarse_series():
    g = build_grid(20, 128, 1)
    prob = SchrodingerProblem(g, 1, PairPotential("constant", 0.0), "linear_nbody", 0.05, 4.0)
    ev = evolve(prob, gaussian_packet(g, 0.5, 0.0, 2.0), lattice(prob, 10))
    fs = [extract(g, p) for p in ev.states]
    with pytest.raises(CoarseSeriesError):
        relative_entropy_fields(ev.times, fs, riemann_tol=1e-8)


# large-N series and monotonicity

def test_product_state_kinetic_series_is_exact():
    vals = [N * 0.7 for N in (1, 2, 4, 8)]
    rep = kinetic_convergence_series([1, 2, 4, 8], vals, 0.7)
    assert max(rep.errors) == 0


def test_kinetic_series_needs_three_values():
    with pytest.raises(ValueError):
        kinetic_convergence_series([2, 4], [1, 2], 0.5)


def test_oracle_energy_series_decreasing():
    Ns = [2, 4, 8, 16, 32]
    t = 0.7
    kin, pot = [], []
    for N in Ns:
        model = QuadraticModel(N, 1.0, 0.5, product_state(N, 0.2, 0.5, 0.1, 0.3))
        th = exact_entropy_energy(solve_quadratic(model, [t])[0], model)
        kin.append(th.kinetic)
        pot.append(th.potential)
    model = QuadraticModel(2, 1.0, 0.5, product_state(2, 0.2, 0.5, 0.1, 0.3))
    lim = exact_entropy_energy(hartree_limit(model).states([t])[0], model, hartree=True)
    ks = kinetic_convergence_series(Ns, kin, lim.kinetic)
    vs = kinetic_convergence_series(Ns, pot, lim.potential)
    assert ks.monotone and vs.monotone
    assert 0.8 < ks.decay_exponent < 1.2
    assert ks.to_dict()["N"] == Ns


def test_monotonicity_product_state_equality():
    s = product_state(3, 0.1, 0.6, 0.2, 0.4)
    full, cond = drift_energies(s, 1)
    res = entropy_monotonicity_check(0.5 * full, 0.5 * cond, jensen_gap=conditioned_jensen_gap(s, 1))
    assert res.holds
    assert abs(res.margin) <= 1e-14
    assert abs(res.jensen_gap) <= 1e-14


def test_monotonicity_entangled_state_strict():
    s = entangled_state()
    full, cond = drift_energies(s, 1)
    res = entropy_monotonicity_check(0.5 * full, 0.5 * cond, jensen_gap=conditioned_jensen_gap(s, 1))
    assert res.holds and res.margin > 1e-3
    assert res.jensen_gap == pytest.approx(full - cond)


def test_monotonicity_negative_control():
    s = entangled_state()
    full, cond = drift_energies(s, 1)
    with pytest.raises(MonotonicityViolation):
        entropy_monotonicity_check(0.5 * full, 0.5 * full + 0.1, strict=True)
    assert not entropy_monotonicity_check(0.5 * full, 0.5 * full + 0.1).holds


def test_monotonicity_convention_mismatch():
    with pytest.raises(ConventionMismatch):
        entropy_monotonicity_check(1.0, 0.5, "half_girsanov", "paper_literal")
