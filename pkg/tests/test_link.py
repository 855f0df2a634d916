import numpy as np
import pytest
from scipy import integrate

from elliptic_bayes.errors import ValueBelowKmin
from elliptic_bayes.grid import build_grid
from elliptic_bayes.link import apply_link, build_link, invert_link


def _bump(s):
    return np.exp(-1.0 / (1.0 - s * s)) if abs(s) < 1 else 0.0


def _profile(t):
    return 1.0 / (1.0 - t) if t < 0 else 1.0 + t


@pytest.fixture(scope="module")
def quad_oracle():
    """Phi from adaptive quadrature of the bump convolution, independent of the table."""
    mass = integrate.quad(_bump, -1, 1, epsabs=1e-14)[0]

    def conv(t):
        pts = [t] if -1 < t < 1 else None
        return integrate.quad(lambda s: _bump(s) * _profile(t - s), -1, 1, points=pts,
                              epsabs=1e-14, epsrel=1e-13, limit=200)[0] / mass

    c0 = conv(0.0)
    return lambda t, k_min=0.1: k_min + (1 - k_min) * conv(t) / c0


def test_phi_matches_quadrature(link, quad_oracle):
    for t in (-15.0, -3.0, -0.7, -0.2, 0.0, 0.3, 0.95, 2.5, 14.0):
        assert link(t) == pytest.approx(quad_oracle(t), abs=1e-8)


def test_phi_at_zero_is_one(link):
    assert abs(link(0.0) - 1.0) <= 1e-10


def test_strictly_increasing_and_convex(link):
    t = np.linspace(-30, 30, 20001)
    v, d = link.evaluate(t)
    assert np.all(np.diff(v) > 0)
    assert np.all(d > 0)
    assert np.all(np.diff(d) >= -1e-12)
    assert np.all(v > link.k_min)


def test_derivative_matches_finite_differences(link):
    t = np.linspace(-12, 12, 2001)
    h = 1e-5
    fd = (link(t + h) - link(t - h)) / (2 * h)
    assert np.max(np.abs(fd - link.derivative(t))) <= 1e-6


def test_affine_right_tail_and_left_limit(link):
    scale = (1 - link.k_min) / link.conv_at_zero
    assert link(25.0) == pytest.approx(link.k_min + scale * 26.0, rel=1e-14)
    assert link(-1e6) - link.k_min < 1e-6


def test_inverse_round_trip(link):
    t = np.linspace(-20, 20, 4001)
    assert np.max(np.abs(link.inverse(link(t)) - t)) <= 1e-6
    assert invert_link(link, 1.0) == pytest.approx(0.0, abs=1e-9)


def test_inverse_rejects_values_below_kmin(link):
    with pytest.raises(ValueBelowKmin):
        link.inverse(np.array([0.05, 1.0]))


def test_apply_link_on_field(link):
    g = build_grid(d=1, n=16)
    F = g.sample(lambda x: 3 * x - 1)
    np.testing.assert_allclose(apply_link(link, F).values, link(F.values))


def test_other_kmin():
    lk = build_link(k_min=0.5)
    assert lk(0.0) == pytest.approx(1.0, abs=1e-10)
    assert lk(-50.0) > 0.5


@pytest.mark.parametrize("k_min", [0.0, 1.0, -0.2])
def test_invalid_kmin(k_min):
    with pytest.raises(ValueError):
        build_link(k_min=k_min)


def test_csv_export(tmp_path, link):
    link.to_csv(tmp_path / "link.csv")
    rows = (tmp_path / "link.csv").read_text().splitlines()
    assert rows[0] == "t,phi,dphi"
    assert len(rows) - 1 == link.t.size
