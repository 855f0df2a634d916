import json

import numpy as np
import pytest
from scipy import integrate

from elliptic_bayes.forward import SourceTerm, forward_map
from elliptic_bayes.grid import build_grid, eval_at_points
from elliptic_bayes.observation import (
    Dataset,
    Likelihood,
    generate_dataset,
    hellinger_distance,
    hellinger_from_solutions,
    interpolation_matrix,
    kl_divergence,
    kl_from_solutions,
    log_likelihood,
    read_dataset,
    sample_sigma,
    write_dataset,
)


def _bump_field(grid, c=0.5):
    return grid.sample(lambda x: np.exp(-30 * (x - c) ** 2) * np.sin(np.pi * x))


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.array([[0.0]]), np.array([1.0]), 0.1)
    with pytest.raises(ValueError):
        Dataset(np.array([[0.5], [0.2]]), np.array([1.0]), 0.1)
    with pytest.raises(ValueError):
        Dataset(np.array([[0.5]]), np.array([1.0]), -1.0)
    d = Dataset(np.array([0.2, 0.4, 0.6]), np.array([1.0, 2.0, 3.0]), 0.1)
    assert d.N == 3 and d.d == 1
    p = d.permuted([2, 0, 1])
    np.testing.assert_array_equal(p.Y, [3.0, 1.0, 2.0])


@pytest.mark.parametrize("d", [1, 2])
def test_interpolation_matrix_matches_pointwise(d):
    g = build_grid(d=d, n=16)
    f = g.field(np.random.default_rng(0).standard_normal(g.size))
    pts = np.random.default_rng(1).uniform(size=(40, d))
    np.testing.assert_allclose(interpolation_matrix(g, pts) @ f.flat, eval_at_points(f, pts), atol=1e-13)


def test_generate_dataset_reproducible_and_noise_level(link, grid64):
    g = SourceTerm.constant(grid64)
    F = _bump_field(grid64)
    a = generate_dataset(F, link, g, None, 5000, 0.05, seed=3, truth_id="t")
    b = generate_dataset(F, link, g, None, 5000, 0.05, seed=3, truth_id="t")
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.Y, b.Y)
    clean = eval_at_points(forward_map(F, link, g), a.X)
    resid = a.Y - clean
    assert np.std(resid) == pytest.approx(0.05, rel=0.05)
    assert np.all((a.X > 0) & (a.X < 1))
    noiseless = generate_dataset(F, link, g, None, 10, 0.0, seed=3)
    np.testing.assert_allclose(noiseless.Y, eval_at_points(forward_map(F, link, g), noiseless.X), atol=1e-14)
    with pytest.raises(ValueError):
        generate_dataset(F, link, g, None, 0, 0.05, seed=3)


def test_likelihood_formula_and_memo(link, grid64):
    g = SourceTerm.constant(grid64)
    F0 = _bump_field(grid64)
    data = generate_dataset(F0, link, g, None, 200, 0.1, seed=4)
    L = Likelihood(data, grid64, link, g, memo=2)
    F = F0 * 0.5
    pred = eval_at_points(forward_map(F, link, g), data.X)
    expected = -0.5 * np.sum((data.Y - pred) ** 2) / 0.01
    assert L(F) == pytest.approx(expected, rel=1e-12)
    L(F)
    assert L.solves == 1
    L(F0), L(F0 * 2.0), L(F)
    assert L.solves == 4  # memo of size 2 evicted F
    assert log_likelihood(F, data, link, g) == pytest.approx(expected, rel=1e-12)


def test_likelihood_rejects_zero_sigma(link, grid64):
    data = Dataset(np.array([[0.5]]), np.array([0.0]), 0.0)
    with pytest.raises(ValueError):
        Likelihood(data, grid64, link, SourceTerm.constant(grid64))


def _brute_force(u0, u, sigma, kind):
    """Integrate over y at every node, then trapezoid in x."""
    vals = []
    for a, b in zip(u0.flat, u.flat):
        p = lambda y, m: np.exp(-(y - m) ** 2 / (2 * sigma**2)) / np.sqrt(2 * np.pi * sigma**2)
        lo, hi = min(a, b) - 12 * sigma, max(a, b) + 12 * sigma
        if kind == "kl":
            f = lambda y: p(y, a) * (np.log(p(y, a)) - np.log(p(y, b))) if p(y, a) > 0 else 0.0
        else:
            f = lambda y: (np.sqrt(p(y, a)) - np.sqrt(p(y, b))) ** 2
        vals.append(integrate.quad(f, lo, hi, epsabs=1e-13, limit=200)[0])
    return float(np.sum(u0.grid.weights * np.array(vals)))


def test_kl_matches_brute_force_integration(link):
    g = build_grid(d=1, n=16)
    src = SourceTerm.constant(g)
    u0 = forward_map(g.zeros(), link, src)
    u = forward_map(_bump_field(g), link, src)
    sigma = 0.02
    assert kl_from_solutions(u0, u, sigma) == pytest.approx(_brute_force(u0, u, sigma, "kl"), rel=1e-6)
    assert kl_divergence(g.zeros(), _bump_field(g), link, src, None, sigma) == pytest.approx(
        kl_from_solutions(u0, u, sigma))


def test_hellinger_matches_brute_force_integration(link):
    g = build_grid(d=1, n=16)
    src = SourceTerm.constant(g)
    u0 = forward_map(g.zeros(), link, src)
    u = forward_map(_bump_field(g), link, src)
    sigma = 0.01
    h2 = _brute_force(u0, u, sigma, "hellinger")
    assert hellinger_from_solutions(u0, u, sigma) == pytest.approx(np.sqrt(h2), abs=1e-7)
    assert hellinger_distance(g.zeros(), _bump_field(g), link, src, None, sigma) == pytest.approx(np.sqrt(h2), abs=1e-7)


def test_distances_vanish_on_identical_solutions(link, grid64):
    u = forward_map(_bump_field(grid64), link, SourceTerm.constant(grid64))
    assert kl_from_solutions(u, u, 0.1) == 0.0
    assert hellinger_from_solutions(u, u, 0.1) == 0.0
    with pytest.raises(ValueError):
        kl_from_solutions(u, u, 0.0)
    with pytest.raises(ValueError):
        hellinger_from_solutions(u, u, -1.0)


@pytest.mark.parametrize("d", [1, 2])
def test_dataset_round_trip(tmp_path, d):
    rng = np.random.default_rng(5)
    data = Dataset(rng.uniform(0.01, 0.99, size=(25, d)), rng.standard_normal(25), 0.07, 11, "bump")
    write_dataset(data, tmp_path / "obs")
    meta = json.loads((tmp_path / "obs.json").read_text())
    assert meta == {"N": 25, "sigma": 0.07, "seed": 11, "truth_id": "bump"}
    header = (tmp_path / "obs.csv").read_text().splitlines()[0]
    assert header == ("x,obs" if d == 1 else "x,y,obs")
    back = read_dataset(tmp_path / "obs.csv")
    np.testing.assert_array_equal(back.X, data.X)
    np.testing.assert_array_equal(back.Y, data.Y)
    assert (back.sigma, back.seed, back.truth_id) == (0.07, 11, "bump")


def test_dataset_sidecar_mismatch(tmp_path):
    data = Dataset(np.array([[0.3], [0.6]]), np.array([1.0, 2.0]), 0.1)
    write_dataset(data, tmp_path / "obs")
    (tmp_path / "obs.json").write_text(json.dumps({"N": 3, "sigma": 0.1, "seed": None, "truth_id": ""}))
    with pytest.raises(ValueError):
        read_dataset(tmp_path / "obs")


def test_sample_sigma():
    Y = np.random.default_rng(6).normal(0.0, 0.3, size=20000)
    data = Dataset(np.full((Y.size, 1), 0.5), Y, 0.3)
    assert sample_sigma(data) == pytest.approx(0.3, rel=0.02)
