import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from nelsonium.grid import (
    GridError, build_grid, divergence, gradient, interpolate, periodic_convolution,
    quadrature, spectral_derivative, spectral_gradient,
)


def test_build_grid_spacing():
    g = build_grid(10, 64, 1)
    assert g.spacing == 0.15625
    assert g.spacing * g.points_per_axis == g.box_length
    assert g.nodes[0] == -5.0


def test_build_grid_rejects_non_power_of_two():
    with pytest.raises(GridError, match="power of two"):
        build_grid(10, 63, 1)


def test_build_grid_four_dims_node_count():
    g = build_grid(10, 64, 4)
    assert g.size == 16_777_216


def test_build_grid_budget_reports_size():
    with pytest.raises(GridError, match="MiB"):
        build_grid(10, 64, 4, max_nodes=2**20)


@pytest.mark.parametrize("L,M,D", [(0.0, 16, 1), (-1.0, 16, 1), (1.0, 16, 0), (1.0, 4, 1)])
def test_build_grid_rejects_bad_arguments(L, M, D):
    with pytest.raises(GridError):
        build_grid(L, M, D)


def test_wavenumbers_cover_fft_range():
    g = build_grid(10, 16, 1)
    k = np.sort(g.wavenumbers)
    assert np.allclose(k, 2 * np.pi * np.arange(-8, 8) / 10)


def test_gradient_of_single_mode():
    g = build_grid(10, 64, 1)
    x = g.nodes
    f = np.sin(2 * np.pi * x / 10)
    df = spectral_gradient(g, f, 0)
    assert np.max(np.abs(df - 2 * np.pi / 10 * np.cos(2 * np.pi * x / 10))) <= 1e-12


def test_gradient_of_constant_is_zero():
    g = build_grid(3, 32, 2)
    assert np.max(np.abs(spectral_gradient(g, np.full(g.shape, 2.5), 1))) <= 1e-14


def test_gradient_of_gaussian_matches_analytic():
    g = build_grid(20, 128, 1)
    x = g.nodes
    err = np.abs(spectral_gradient(g, np.exp(-x**2), 0) + 2 * x * np.exp(-x**2))
    assert err.max() <= 1e-10


def test_gradient_keeps_complex_fields_complex():
    g = build_grid(20, 128, 1)
    psi = np.exp(-g.nodes**2 + 1j * g.nodes)
    d = spectral_gradient(g, psi, 0)
    assert np.iscomplexobj(d)
    assert np.max(np.abs(d - (-2 * g.nodes + 1j) * psi)) < 1e-9


def test_gradient_axis_bounds():
    g = build_grid(1, 8, 2)
    with pytest.raises(GridError):
        spectral_gradient(g, np.zeros(g.shape), 2)


def test_double_gradient_equals_second_derivative():
    g = build_grid(20, 128, 2)
    x, y = g.coordinate(0), g.coordinate(1)
    f = np.exp(-(x - 1) ** 2 - 0.5 * y**2) * np.cos(y)
    twice = spectral_gradient(g, spectral_gradient(g, f, 0), 0)
    direct = spectral_derivative(g, f, [2, 0])
    assert np.max(np.abs(twice - direct)) <= 1e-10 * np.max(np.abs(direct))


def test_divergence_of_gradient_is_laplacian():
    g = build_grid(20, 128, 2)
    x, y = g.coordinate(0), g.coordinate(1)
    f = np.exp(-(x**2) - y**2)
    lap = spectral_derivative(g, f, [2, 0]) + spectral_derivative(g, f, [0, 2])
    assert np.allclose(divergence(g, gradient(g, f)), lap, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (32,), elements=st.floats(-10, 10)))
def test_gradient_integrates_to_zero(values):
    g = build_grid(7.0, 32, 1)
    total = quadrature(g, spectral_gradient(g, values, 0))
    assert abs(total) <= 1e-10 * max(1.0, np.linalg.norm(values))


def test_quadrature_normalized_gaussian():
    g = build_grid(20, 128, 1)
    f = np.exp(-g.nodes**2 / 2) / np.sqrt(2 * np.pi)
    assert abs(quadrature(g, f) - 1) <= 1e-10


def test_quadrature_constant():
    g = build_grid(10, 16, 1)
    assert quadrature(g, np.full(g.shape, 3.0)) == pytest.approx(30.0, rel=1e-14)


def test_quadrature_fubini():
    g = build_grid(8, 32, 2)
    x, y = g.coordinate(0), g.coordinate(1)
    gx, hy = np.exp(-x**2), np.exp(-(y**2)) * (1 + y**2)
    out = quadrature(g, gx * hy, axes=[1])
    assert out.shape == (32,)
    assert np.allclose(out, np.exp(-g.nodes**2) * np.sum(hy) * g.spacing, rtol=1e-14)


def test_quadrature_rejects_empty():
    g = build_grid(1, 8, 1)
    with pytest.raises(GridError):
        quadrature(g, np.array([]))


def test_convolution_with_delta_shifts():
    g = build_grid(4, 32, 1)
    delta = np.zeros(32)
    delta[16 + 3] = 1 / g.spacing  # displacement +3 dx
    b = np.random.default_rng(0).random(32)
    assert np.allclose(periodic_convolution(g, delta, b), np.roll(b, 3), atol=1e-12)


def _direct_convolution(g, a, b):
    M = g.points_per_axis
    out = np.zeros(M)
    for i in range(M):
        for j in range(M):
            # displacement index (i - j) lives at node M/2 + (i - j)
            out[i] += a[(M // 2 + i - j) % M] * b[j]
    return out * g.spacing


def test_convolution_box_gives_triangle():
    g = build_grid(8, 64, 1)
    w = 1.0
    box = (np.abs(g.nodes) < w / 2 - 1e-12).astype(float)
    tri = periodic_convolution(g, box, box)
    assert np.allclose(tri, _direct_convolution(g, box, box), atol=1e-12)
    assert tri.max() == pytest.approx(np.sum(box) * g.spacing, rel=1e-12)


def test_convolution_matches_direct_sum_on_random_fields():
    g = build_grid(5, 32, 1)
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal(32), rng.standard_normal(32)
    direct = _direct_convolution(g, a, b)
    assert np.max(np.abs(periodic_convolution(g, a, b) - direct)) <= 1e-10 * np.max(np.abs(direct))


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (16,), elements=st.floats(-5, 5)), arrays(np.float64, (16,), elements=st.floats(-5, 5)))
def test_convolution_commutes(a, b):
    g = build_grid(3, 16, 1)
    ab, ba = periodic_convolution(g, a, b), periodic_convolution(g, b, a)
    assert np.max(np.abs(ab - ba)) <= 1e-12 * max(1.0, np.max(np.abs(ab)))


def test_convolution_needs_one_axis():
    with pytest.raises(GridError):
        periodic_convolution(build_grid(1, 8, 2), np.zeros((8, 8)), np.zeros((8, 8)))


def test_interpolate_on_node():
    g = build_grid(4, 16, 2)
    f = np.random.default_rng(1).random(g.shape)
    assert interpolate(g, f, np.array([g.nodes[3], g.nodes[7]])) == pytest.approx(f[3, 7])


def test_interpolate_midpoint_is_mean():
    g = build_grid(4, 16, 1)
    f = np.random.default_rng(2).random(16)
    mid = 0.5 * (g.nodes[4] + g.nodes[5])
    assert interpolate(g, f, np.array([mid])) == pytest.approx(0.5 * (f[4] + f[5]))


@settings(max_examples=40, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_interpolate_reproduces_multilinear(a, b, c, px, py):
    g = build_grid(4, 16, 2)
    x, y = g.coordinate(0), g.coordinate(1)
    f = a * x + b * y + c * x * y + 0.0 * x * y
    val = interpolate(g, f, np.array([[px, py]]))[0]
    assert val == pytest.approx(a * px + b * py + c * px * py, abs=1e-12)


def test_interpolate_vector_field_shape():
    g = build_grid(4, 8, 2)
    vec = np.stack([np.ones(g.shape), 2 * np.ones(g.shape)])
    out = interpolate(g, vec, np.zeros((5, 2)))
    assert out.shape == (5, 2)
    assert np.allclose(out, [1, 2])


def test_interpolate_nan_raises():
    g = build_grid(4, 8, 1)
    f = np.zeros(8)
    f[3] = np.nan
    with pytest.raises(FloatingPointError):
        interpolate(g, f, np.array([g.nodes[3]]))


def test_wrap_and_min_image():
    g = build_grid(4, 8, 1)
    assert g.wrap(np.array([2.0]))[0] == -2.0
    assert g.min_image(np.array([3.0]))[0] == pytest.approx(-1.0)
