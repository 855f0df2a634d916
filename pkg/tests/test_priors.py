import math

import numpy as np
import pytest
from scipy.special import gamma, kv

from elliptic_bayes.errors import UnsupportedLevel, VariantMismatch
from elliptic_bayes.grid import build_grid
from elliptic_bayes.priors import (
    MaternPrior,
    PriorSpec,
    SeriesCoefficients,
    SeriesPrior,
    build_prior,
    build_sampler,
    cutoff_field,
    draw_prior,
    j_min,
    level_weight,
    matern_covariance,
    matern_kernel,
    rkhs_norm,
    sample_truncation_level,
    smooth_step,
    truncation_logpmf,
    truncation_tail,
)
from elliptic_bayes.wavelets import DaubechiesBasis


def bessel_kernel(r, alpha, d):
    """Closed form of the Fourier integral of (1 + |xi|^2)^-alpha over R^d."""
    nu = alpha - d / 2
    r = np.asarray(r, dtype=float)
    return (2 * np.pi) ** (d / 2) * 2 ** (1 - alpha) / gamma(alpha) * r**nu * kv(nu, r)


def test_smooth_step_limits():
    t = np.array([-1.0, 0.0, 0.5, 1.0, 2.0])
    np.testing.assert_allclose(smooth_step(t), [0, 0, 0.5, 1, 1])
    s = smooth_step(np.linspace(0, 1, 101))
    assert np.all(np.diff(s) >= 0)


def test_cutoff_plateau_and_support():
    g = build_grid(d=1, n=256)
    chi = cutoff_field(g, (0.25, 0.75), (0.1, 0.9)).values
    x = g.axis
    assert np.all(chi[(x >= 0.25) & (x <= 0.75)] == 1.0)
    assert np.all(chi[(x <= 0.1) | (x >= 0.9)] == 0.0)
    assert np.all((chi >= 0) & (chi <= 1))
    g2 = build_grid(d=2, n=16)
    chi2 = cutoff_field(g2).values
    assert chi2[8, 8] == 1.0 and chi2[0, 8] == 0.0


@pytest.mark.parametrize("alpha,d", [(2.0, 1), (3.0, 1), (2.5, 2), (3.0, 2)])
def test_matern_kernel_matches_bessel_form(alpha, d):
    r = np.array([1e-3, 0.05, 0.3, 0.7, 1.2, 2.5, 5.0])
    np.testing.assert_allclose(matern_kernel(r, alpha, d), bessel_kernel(r, alpha, d), rtol=1e-8, atol=1e-12)


def test_matern_lag_zero_values():
    assert matern_kernel(0.0, 2.0, 1) == pytest.approx(np.pi / 2, rel=1e-10)
    assert matern_kernel(0.0, 3.0, 2) == pytest.approx(np.pi / 2, rel=1e-10)  # pi / (alpha - 1)
    assert matern_covariance([0.1], [0.4], 2.0, 1) == pytest.approx(bessel_kernel(0.3, 2.0, 1), rel=1e-8)


def test_prior_spec_validation():
    with pytest.raises(ValueError):
        PriorSpec.matern(1.4, 1, n_obs=10)
    with pytest.raises(ValueError):
        PriorSpec.matern(3.0, 2, n_obs=10, plateau=(0.05, 0.7), support=(0.1, 0.9))
    with pytest.raises(ValueError):
        PriorSpec("matern", 3.0)  # rescaled prior needs N
    with pytest.raises(ValueError):
        PriorSpec.sieve(3.0, 0)
    with pytest.raises(ValueError):
        PriorSpec("gamma", 3.0, n_obs=1)


def test_rescaling_exponent():
    spec = PriorSpec.matern(3.0, 1, n_obs=2**18)
    # N^(-d / (4 alpha + 4 + 2 d)) = 2^(-18/18)
    assert spec.scaling == pytest.approx(0.5, rel=1e-14)
    assert spec.with_scaling(1).scaling == pytest.approx(1.0)
    assert PriorSpec.sieve(3.0, 2).scaling == 1.0


def test_truncation_tail_values():
    assert truncation_tail(1, 1) == pytest.approx(0.25, rel=1e-14)
    assert truncation_tail(2, 1) == pytest.approx(1 / 256, rel=1e-14)
    assert truncation_tail(1, 2) == pytest.approx(4.0**-4, rel=1e-14)


@pytest.mark.parametrize("d", [1, 2])
def test_truncation_pmf_consistent_with_tails(d):
    total = 0.0
    for j in range(1, 6):
        p = math.exp(truncation_logpmf(j, d))
        tail_prev = 1.0 if j == 1 else truncation_tail(j - 1, d)
        assert p == pytest.approx(tail_prev - truncation_tail(j, d), rel=1e-12, abs=1e-300)
        total += p
    assert total == pytest.approx(1.0, abs=1e-15)
    assert truncation_logpmf(0, d) == -np.inf


def test_truncation_sampler_frequencies():
    J = sample_truncation_level(1, np.random.default_rng(0), size=200_000)
    assert J.min() >= 1
    for j in (1, 2):
        p = truncation_tail(j, 1)
        se = math.sqrt(p * (1 - p) / J.size)
        assert abs(np.mean(J > j) - p) < 4 * se
    assert isinstance(sample_truncation_level(2, np.random.default_rng(1)), int)


def test_rkhs_norm_weights_levels():
    c = SeriesCoefficients(2, {-1: np.array([1.0]), 0: np.array([2.0]), 2: np.array([0.5, 0.5])})
    alpha = 2.0
    expected = math.sqrt(1 + 4 + 0.5 * 2 ** (2 * 2 * alpha))
    assert rkhs_norm(c, alpha) == pytest.approx(expected)
    with pytest.raises(VariantMismatch):
        rkhs_norm(np.ones(3), alpha)
    with pytest.raises(ValueError):
        SeriesCoefficients(1, {2: np.ones(2)})


def test_level_weight():
    assert level_weight(-1, 3.0) == 1.0
    assert level_weight(0, 3.0) == 1.0
    assert level_weight(2, 1.5) == 2.0**-3


def test_sampler_covariance_restricted_to_support():
    g = build_grid(d=1, n=32)
    s = build_sampler(g, 2.0)
    chi = cutoff_field(g).flat
    assert np.array_equal(s.nodes, np.flatnonzero(chi > 0))
    np.testing.assert_allclose(s.factor @ s.factor.T, s.covariance + s.jitter * np.eye(s.dim), atol=1e-10)
    F = s.draw(np.random.default_rng(2))
    assert np.all(F.flat[chi == 0] == 0.0)


def test_matern_prior_scaling_applied():
    g = build_grid(d=1, n=32)
    spec = PriorSpec.matern(3.0, 1, n_obs=4096)
    prior = MaternPrior(spec, g)
    z = np.random.default_rng(3).standard_normal(prior.dim())
    state = prior.initial_state()
    state.z[:] = z
    np.testing.assert_allclose(prior.values(state), spec.scaling * prior.sampler.base_values(z))


def test_series_prior_structure():
    g = build_grid(d=1, n=64)
    spec = PriorSpec.sieve(2.0, 2)
    prior = SeriesPrior(spec, g)
    sizes = prior.level_sizes(2)
    assert prior.dim() == sum(sizes)
    rng = np.random.default_rng(4)
    state = prior.draw_state(rng)
    expected = sum(prior.block(lv) @ part for lv, part in
                   zip(range(-1, 3), np.split(state.z, np.cumsum(sizes)[:-1])))
    np.testing.assert_allclose(prior.values(state), expected)
    coeffs = prior.coefficients(state)
    assert coeffs.level == 2
    np.testing.assert_allclose(coeffs.values[2], 2.0**-4 * np.split(state.z, np.cumsum(sizes)[:-1])[3])
    with pytest.raises(UnsupportedLevel):
        prior.dim(7)


def test_series_coefficient_variances():
    g = build_grid(d=1, n=64)
    alpha = 1.75
    prior = SeriesPrior(PriorSpec.sieve(alpha, 3), g)
    rng = np.random.default_rng(5)
    draws = [prior.coefficients(prior.draw_state(rng)) for _ in range(4000)]
    for lv in range(-1, 4):
        v = np.concatenate([d.values[lv] for d in draws])
        target = 2.0 ** (-2 * max(lv, 0) * alpha)
        se = target * math.sqrt(2.0 / v.size)
        assert abs(np.mean(v**2) - target) < 4 * se


def test_hierarchical_draws_random_levels():
    g = build_grid(d=1, n=64)
    prior = build_prior(PriorSpec.hierarchical(2.0), g)
    levels = {prior.draw_state(np.random.default_rng(k)).J for k in range(200)}
    assert 1 in levels and len(levels) >= 2
    assert prior.initial_state().J == 1


def test_draw_prior_returns_coefficients_for_series_only():
    g = build_grid(d=1, n=32)
    F, c = draw_prior(PriorSpec.matern(2.0, 1, n_obs=100), g, np.random.default_rng(0))
    assert c is None and F.values.shape == (33,)
    F, c = draw_prior(PriorSpec.sieve(2.0, 1), g, np.random.default_rng(0))
    assert isinstance(c, SeriesCoefficients)


def test_j_min_levels_inside_plateau():
    g = build_grid(d=1, n=256)
    basis = DaubechiesBasis(g, region=(0.4, 0.6))
    j = j_min(basis, (0.1, 0.9))
    assert j is not None
    for ix in basis.indices(j):
        (lo, hi), = basis.support(ix)
        assert 0.1 <= lo and hi <= 0.9
