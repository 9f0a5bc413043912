import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qhjb.lattice import (Grid, GridMismatchError, ScalarField, VectorField, convergence_order, diff,
                          divergence, gradient, integrate, laplacian, laplacian_1d_matrix)


def test_grid_defaults_and_spacing():
    g = Grid.line(64, 8.0, boundary="periodic")
    assert g.origin == (-4.0,)
    assert g.spacing == (0.125,)
    c = Grid.line(65, 8.0)
    assert c.spacing == (0.125,)
    assert c.axis(0)[-1] == pytest.approx(4.0)


@pytest.mark.parametrize("kwargs", [dict(points=4, extent=1.0), dict(points=16, extent=-1.0),
                                    dict(points=16, extent=1.0, boundary="open")])
def test_grid_rejects_bad_input(kwargs):
    with pytest.raises(ValueError):
        Grid.line(**kwargs)


def test_grid_round_trip_and_refine():
    g = Grid.square(16, 4.0, boundary="clamped", origin=-1.0)
    assert Grid.from_dict(g.to_dict()) == g
    assert g.refined().points == (31, 31)
    assert Grid.line(16, 4.0, "periodic").refined().points == (32,)


def test_field_shape_checked():
    g = Grid.line(16, 1.0)
    with pytest.raises(GridMismatchError):
        ScalarField(g, np.zeros(15))
    with pytest.raises(GridMismatchError):
        VectorField(g, np.zeros((2, 16)))
    f = ScalarField(g, np.zeros(16))
    with pytest.raises(ValueError):
        f.values[0] = 1.0


@pytest.mark.parametrize("boundary", ["periodic", "clamped"])
def test_gradient_second_order(boundary):
    errs = []
    for n in (64, 128, 256):
        g = Grid.line(n, 2 * np.pi, boundary=boundary)
        x = g.axis(0)
        d = gradient(ScalarField(g, np.sin(x))).values[0]
        errs.append(np.max(np.abs(d - np.cos(x))))
    orders = convergence_order(errs)
    assert min(orders) > 1.9


def test_laplacian_of_quadratic_is_exact_in_interior():
    g = Grid.line(32, 4.0)
    x = g.axis(0)
    lap = laplacian(ScalarField(g, 3 * x ** 2)).values
    assert np.allclose(lap[2:-2], 6.0, atol=1e-10)


def test_two_dimensional_divergence_of_linear_field():
    g = Grid.square(16, 2.0)
    x, y = g.coords()
    v = VectorField(g, np.stack([2 * x, -y]))
    assert np.allclose(divergence(v).values, 1.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=16, max_size=16))
def test_periodic_laplacian_sums_to_zero(vals):
    g = Grid.line(16, 3.0, boundary="periodic")
    total = integrate(laplacian(ScalarField(g, np.array(vals))))
    assert abs(total) <= 1e-9 * (1 + np.max(np.abs(vals)))


def test_matrix_matches_periodic_laplacian():
    g = Grid.line(32, 5.0, boundary="periodic")
    f = np.random.default_rng(0).normal(size=32)
    m = laplacian_1d_matrix(32, g.spacing[0], True)
    assert np.allclose(m @ f, laplacian(ScalarField(g, f)).values)
    assert abs(m - m.T).max() == 0


def test_integrate_rules():
    g = Grid.line(101, 2.0)
    assert integrate(ScalarField(g, g.axis(0) + 1)) == pytest.approx(2.0)
    p = Grid.line(64, 2 * np.pi, boundary="periodic")
    assert integrate(ScalarField(p, np.cos(p.axis(0)) ** 2)) == pytest.approx(np.pi)


def test_diff_clamped_edges_exact_for_quadratics():
    x = np.linspace(0, 1, 11)
    d = diff(x ** 2, 0.1, 0, False)
    assert np.allclose(d, 2 * x)
