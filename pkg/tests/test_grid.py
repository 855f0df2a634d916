import numpy as np
import pytest

from elliptic_bayes.errors import InvalidResolution, PointOutsideDomain, ResolutionTooCoarse
from elliptic_bayes.grid import (
    DomainSpec,
    build_grid,
    c1_norm,
    derivatives,
    eval_at_points,
    h2_norm,
    inner_product,
    quadrature_l2,
    read_field_csv,
    sobolev_seminorm,
    write_field_csv,
)


@pytest.mark.parametrize("d,n", [(3, 8), (0, 8), (1, 6), (1, 2), (2, 12)])
def test_domain_spec_rejects_bad_input(d, n):
    with pytest.raises(InvalidResolution):
        DomainSpec(d=d, n=n)


def test_grid_geometry_2d():
    g = build_grid(d=2, n=8)
    assert g.shape == (9, 9) and g.size == 81
    assert g.coords.shape == (81, 2)
    # row-major: x outer, y inner
    np.testing.assert_allclose(g.coords[1], [0.0, 0.125])
    np.testing.assert_allclose(g.coords[9], [0.125, 0.0])
    assert g.weights.sum() == pytest.approx(1.0)
    assert g.interior.sum() == 49


def test_l2_norm_of_sine_matches_analytic():
    g = build_grid(d=1, n=512)
    f = g.sample(lambda x: np.sin(np.pi * x))
    assert quadrature_l2(f) == pytest.approx(np.sqrt(0.5), abs=1e-6)


def test_l2_norm_2d_product():
    g = build_grid(d=2, n=128)
    f = g.sample(lambda x, y: np.sin(np.pi * x) * np.sin(2 * np.pi * y))
    assert quadrature_l2(f) == pytest.approx(0.5, abs=1e-5)
    assert inner_product(f, f) == pytest.approx(0.25, abs=1e-5)


def test_derivatives_second_order_accurate():
    errs = []
    for n in (64, 128):
        g = build_grid(d=1, n=n)
        f = g.sample(lambda x: np.exp(x) * np.sin(3 * x))
        d1 = derivatives(f, 1)[0]
        d2 = derivatives(f, 2)[0]
        x = g.axis
        e1 = np.max(np.abs(d1 - np.exp(x) * (np.sin(3 * x) + 3 * np.cos(3 * x))))
        e2 = np.max(np.abs(d2 - np.exp(x) * (-8 * np.sin(3 * x) + 6 * np.cos(3 * x))))
        errs.append((e1, e2))
    assert 3.5 < errs[0][0] / errs[1][0] < 4.5
    assert 3.0 < errs[0][1] / errs[1][1] < 5.0


def test_h2_norm_of_sine():
    g = build_grid(d=1, n=1024)
    f = g.sample(lambda x: np.sin(np.pi * x))
    exact = np.sqrt(0.5 * (1 + np.pi**2 + np.pi**4))
    assert h2_norm(f) == pytest.approx(exact, rel=1e-4)
    assert sobolev_seminorm(f, 1) == pytest.approx(np.pi / np.sqrt(2), rel=1e-5)


def test_c1_norm():
    g = build_grid(d=1, n=1024)
    f = g.sample(lambda x: x**2)
    assert c1_norm(f) == pytest.approx(3.0, abs=1e-6)


def test_derivative_order_is_validated():
    g = build_grid(d=1, n=4)
    derivatives(g.zeros(), 2)  # the coarsest grid still supports both stencils
    with pytest.raises(ValueError):
        derivatives(g.zeros(), 3)


def test_interpolation_exact_for_linear_functions():
    g = build_grid(d=2, n=8)
    f = g.sample(lambda x, y: 1 + 2 * x - 3 * y)
    pts = np.random.default_rng(0).uniform(size=(50, 2))
    np.testing.assert_allclose(eval_at_points(f, pts), 1 + 2 * pts[:, 0] - 3 * pts[:, 1], atol=1e-13)


def test_interpolation_rejects_outside_points():
    g = build_grid(d=1, n=8)
    with pytest.raises(PointOutsideDomain):
        eval_at_points(g.zeros(), [1.1])
    assert eval_at_points(g.zeros(), np.zeros((0, 1))).size == 0


def test_field_rejects_non_finite():
    g = build_grid(d=1, n=8)
    with pytest.raises(ValueError):
        g.field(np.full(9, np.nan))
    with pytest.raises(ValueError):
        g.field(np.zeros(7))


def test_field_arithmetic():
    g = build_grid(d=1, n=8)
    a, b = g.constant(2.0), g.sample(lambda x: x)
    np.testing.assert_allclose((a * b - b + (-a)).values, g.axis - 2.0)
    np.testing.assert_allclose((3 * b).values, 3 * g.axis)


@pytest.mark.parametrize("d", [1, 2])
def test_field_csv_round_trip(tmp_path, d):
    g = build_grid(d=d, n=8)
    f = g.field(np.random.default_rng(1).standard_normal(g.size))
    write_field_csv(f, tmp_path / "f.csv")
    back = read_field_csv(tmp_path / "f.csv")
    assert back.grid.d == d and back.grid.n == 8
    np.testing.assert_array_equal(back.values, f.values)


def test_resolution_too_coarse_is_a_value_error():
    assert issubclass(ResolutionTooCoarse, ValueError)
