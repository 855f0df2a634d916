"""Gaussian prior families for the latent field F.

* rescaled Whittle-Matern process multiplied by a smooth cutoff,
* truncated wavelet series (sieve) with level weights ``2**(-l alpha)``,
* the same series with a random truncation level ``J``.

All three are represented for sampling purposes by a *whitened* state: a
vector of iid standard normals (plus ``J`` for the hierarchical family) that a
fixed linear synthesis maps to grid values.  pCN then runs in that standard
Gaussian space.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import integrate, linalg
from scipy.special import j0, jn_zeros

from .errors import QuadratureNonConvergence, UnsupportedLevel, VariantMismatch
from .grid import Grid, GridField
from .wavelets import make_basis

log = logging.getLogger(__name__)

MATERN = "matern"
SIEVE = "sieve"
HIERARCHICAL = "hierarchical"
VARIANTS = (MATERN, SIEVE, HIERARCHICAL)


# --------------------------------------------------------------------------
# cutoff


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)
    a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
    b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def cutoff_1d(x, plateau, support):
    (a, b), (lo, hi) = plateau, support
    return smooth_step((x - lo) / (a - lo)) * smooth_step((hi - x) / (hi - b))


def cutoff_field(grid: Grid, plateau=(0.25, 0.75), support=(0.1, 0.9)) -> GridField:
    """Smooth cutoff equal to 1 on ``plateau**d`` and vanishing off ``support**d``."""
    parts = [cutoff_1d(m, plateau, support) for m in grid.mesh]
    vals = parts[0] if grid.d == 1 else parts[0] * parts[1]
    return grid.field(vals)


# --------------------------------------------------------------------------
# Matern kernel by spectral quadrature


def _quiet_quad(*args, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            return integrate.quad(*args, **kw)
        except integrate.IntegrationWarning as exc:
            raise QuadratureNonConvergence(str(exc)) from exc


@lru_cache(maxsize=None)
def _lobe_edges(kind: str, count: int) -> np.ndarray:
    """Zeros of cos (kind 'cos') or J0 (kind 'j0') on the positive axis."""
    if kind == "cos":
        return (np.arange(count) + 0.5) * np.pi
    return jn_zeros(0, count)


def _oscillatory_integral(r: float, alpha: float, kind: str, tol: float = 1e-12) -> float:
    """int_0^inf rho**p w(r rho) (1 + rho^2)^-alpha d rho for r > 0.

    ``w`` is cos (p = 0) or J0 (p = 1).  The first lobe is integrated
    adaptively; later lobes, between consecutive zeros of ``w``, by
    Gauss-Legendre, and the alternating lobe series is accelerated by
    repeated averaging of its partial sums.
    """
    p, w = (0, np.cos) if kind == "cos" else (1, j0)

    def integrand(rho):
        return rho**p * w(r * rho) * (1.0 + rho * rho) ** (-alpha)

    nodes, wts = np.polynomial.legendre.leggauss(32)
    for count in (200, 800, 3200):
        edges = _lobe_edges(kind, count) / r
        head, _ = _quiet_quad(
            integrand, 0.0, edges[0], points=[x for x in (1.0, 10.0) if x < edges[0]],
            limit=200, epsabs=1e-14, epsrel=1e-13,
        )
        a, b = edges[:-1], edges[1:]
        rho = 0.5 * (b + a)[:, None] + 0.5 * (b - a)[:, None] * nodes[None, :]
        terms = np.sum(0.5 * (b - a)[:, None] * wts[None, :] * integrand(rho), axis=1)
        partial = head + np.cumsum(terms)[-40:]
        for _ in range(30):
            partial = 0.5 * (partial[1:] + partial[:-1])
        estimate = partial[-1]
        if abs(partial[-1] - partial[-2]) <= tol * max(1.0, abs(estimate)):
            return float(estimate)
    raise QuadratureNonConvergence(f"Matern spectral quadrature failed at r={r}")


@lru_cache(maxsize=200_000)
def _kernel_scalar(r: float, alpha: float, d: int) -> float:
    if d not in (1, 2):
        raise ValueError("d must be 1 or 2")
    if r == 0.0:
        p = d - 1
        val, _ = _quiet_quad(
            lambda rho: rho**p * (1.0 + rho * rho) ** (-alpha),
            0.0, np.inf, epsabs=1e-14, epsrel=1e-13,
        )
    else:
        val = _oscillatory_integral(r, alpha, "cos" if d == 1 else "j0")
    # d = 1: even integrand over the line; d = 2: polar angle integral 2 pi
    return 2.0 * val if d == 1 else 2.0 * np.pi * val


def matern_kernel(r, alpha: float, d: int) -> np.ndarray:
    """Stationary kernel at lag(s) ``r`` for spectral density ``(1+|xi|^2)^-alpha``."""
    if not alpha > d / 2:
        raise ValueError(f"alpha must exceed d/2 = {d / 2}")
    r = np.abs(np.asarray(r, dtype=float))
    flat = np.round(r.ravel(), 14)
    uniq, inv = np.unique(flat, return_inverse=True)
    vals = np.array([_kernel_scalar(float(u), float(alpha), int(d)) for u in uniq])
    out = vals[inv].reshape(r.shape)
    return float(out) if out.ndim == 0 else out


def matern_covariance(x, y, alpha: float, d: int) -> float:
    diff = np.atleast_1d(np.asarray(x, float) - np.asarray(y, float))
    return float(matern_kernel(np.linalg.norm(diff), alpha, d))


# --------------------------------------------------------------------------
# Specification


@dataclass(frozen=True)
class PriorSpec:
    variant: str
    alpha: float
    d: int = 1
    plateau: tuple = (0.25, 0.75)  # chi == 1 here
    support: tuple = (0.1, 0.9)  # chi vanishes outside
    region: tuple = (0.25, 0.75)  # series: keep basis functions meeting this set
    n_obs: int | None = None  # drives the N**(-d/(4a+4+2d)) rescaling
    scale_const: float = 1.0
    level: int | None = None  # sieve truncation J
    basis: str = "daubechies"
    moments: int = 6
    jitter: float = 1e-10

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown prior variant {self.variant!r}")
        if self.d not in (1, 2):
            raise ValueError("d must be 1 or 2")
        if not self.alpha > 1 + self.d / 2:
            raise ValueError(f"alpha must exceed 1 + d/2 = {1 + self.d / 2}")
        (a, b), (lo, hi) = self.plateau, self.support
        if not (0.0 < lo < a < b < hi < 1.0):
            raise ValueError("need 0 < support_lo < plateau_lo < plateau_hi < support_hi < 1")
        if self.variant == MATERN and self.n_obs is None:
            raise ValueError("rescaled Matern prior needs n_obs")
        if self.variant == SIEVE and (self.level is None or self.level < 1):
            raise ValueError("sieve prior needs a truncation level >= 1")
        if not 0 < self.jitter <= 1e-8:
            raise ValueError("jitter must lie in (0, 1e-8]")

    @classmethod
    def matern(cls, alpha, d=1, n_obs=1, **kw):
        return cls(MATERN, alpha, d, n_obs=n_obs, **kw)

    @classmethod
    def sieve(cls, alpha, level, d=1, **kw):
        kw.setdefault("plateau", (0.1, 0.9))
        kw.setdefault("support", (0.02, 0.98))
        return cls(SIEVE, alpha, d, level=level, **kw)

    @classmethod
    def hierarchical(cls, alpha, d=1, **kw):
        kw.setdefault("plateau", (0.1, 0.9))
        kw.setdefault("support", (0.02, 0.98))
        return cls(HIERARCHICAL, alpha, d, **kw)

    @property
    def scaling(self) -> float:
        """Multiplicative rescaling ``c * N**(-d/(4 alpha + 4 + 2d))`` (1 if no N)."""
        if self.n_obs is None:
            return self.scale_const
        return self.scale_const * float(self.n_obs) ** (
            -self.d / (4 * self.alpha + 4 + 2 * self.d)
        )

    def with_scaling(self, n_obs):
        return replace(self, n_obs=n_obs)


@dataclass
class SeriesCoefficients:
    """Coefficients of ``F`` in the basis, per level (levels -1..J)."""

    level: int
    values: dict  # level -> array of coefficients multiplying Psi_{l r}

    def __post_init__(self):
        for lv, arr in self.values.items():
            if lv > self.level:
                raise ValueError("coefficient level exceeds truncation level")
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite coefficient")


def level_weight(level: int, alpha: float) -> float:
    # the coarse scaling block is weighted like level 0
    return 2.0 ** (-max(level, 0) * alpha)


def rkhs_norm(coeffs, alpha: float) -> float:
    """sqrt(sum_l 2**(2 l alpha) * sum_r c_{lr}**2)."""
    if not isinstance(coeffs, SeriesCoefficients):
        raise VariantMismatch("RKHS norm is defined here for series coefficients only")
    total = 0.0
    for lv, arr in coeffs.values.items():
        total += np.sum(np.asarray(arr) ** 2) / level_weight(lv, alpha) ** 2
    return float(np.sqrt(total))


# --------------------------------------------------------------------------
# truncation level law


def _xlogx_inverse(T, tol=1e-12, maxiter=50):
    T = np.asarray(T, dtype=float)
    x = np.maximum(T / np.log(np.maximum(T, np.e)), 1.0)
    for _ in range(maxiter):
        step = (x * np.log(x) - T) / (np.log(x) + 1.0)
        x = np.maximum(x - step, 1.0)
        if np.all(np.abs(step) <= tol * np.maximum(x, 1.0)):
            break
    return x


def sample_truncation_level(d: int, rng, size=None):
    """J = floor(log2(phi^-1(T)**(1/d))) + 1 with T ~ Exp(1), phi(x) = x log x."""
    if d not in (1, 2):
        raise ValueError("d must be 1 or 2")
    T = rng.exponential(1.0, size=size)
    x = _xlogx_inverse(T)
    J = np.floor(np.log2(x) / d).astype(int) + 1
    J = np.maximum(J, 1)
    return int(J) if size is None else J


def truncation_tail(j: int, d: int) -> float:
    """Pr(J > j) = exp(-2**(jd) log 2**(jd))."""
    m = 2.0 ** (j * d)
    return float(np.exp(-m * np.log(m)))


def truncation_logpmf(j: int, d: int) -> float:
    if j < 1:
        return -np.inf
    lo = 2.0 ** ((j - 1) * d)
    hi = 2.0 ** (j * d)
    a = lo * np.log(lo)
    b = hi * np.log(hi)
    return float(-a + np.log1p(-np.exp(-(b - a))))


# --------------------------------------------------------------------------
# Matern sampler


@dataclass(frozen=True, eq=False)
class GaussianSampler:
    """Cholesky factor of the Matern covariance restricted to the cutoff's support."""

    grid: Grid
    alpha: float
    cutoff: GridField
    nodes: np.ndarray  # flat indices where chi > 0
    factor: np.ndarray  # lower triangular
    jitter: float
    covariance: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.nodes.size

    def base_values(self, z) -> np.ndarray:
        """Flat node values of chi * (L z)."""
        out = np.zeros(self.grid.size)
        out[self.nodes] = self.cutoff.flat[self.nodes] * (self.factor @ z)
        return out

    def draw(self, rng) -> GridField:
        return self.grid.field(self.base_values(rng.standard_normal(self.dim)))


def build_sampler(grid: Grid, alpha: float, plateau=(0.25, 0.75), support=(0.1, 0.9), jitter=1e-10) -> GaussianSampler:
    chi = cutoff_field(grid, plateau, support)
    nodes = np.flatnonzero(chi.flat > 0)
    pts = grid.coords[nodes]
    diff = pts[:, None, :] - pts[None, :, :]
    C = matern_kernel(np.sqrt(np.sum(diff**2, axis=-1)), alpha, grid.d)
    eye = np.eye(nodes.size)
    jit = jitter
    while True:
        try:
            L = linalg.cholesky(C + jit * eye, lower=True)
            break
        except linalg.LinAlgError:
            if jit >= 1e-8:
                raise
            jit = min(jit * 10.0, 1e-8)
            log.info("raising Cholesky jitter to %g", jit)
    return GaussianSampler(grid, alpha, chi, nodes, L, jit, C)


def draw_base_matern(sampler: GaussianSampler, rng) -> GridField:
    return sampler.draw(rng)


# --------------------------------------------------------------------------
# whitened prior models used by the sampler


@dataclass
class LatentState:
    z: np.ndarray
    J: int | None = None

    def copy(self):
        return LatentState(self.z.copy(), self.J)


class LatentPrior:
    """A prior on F written as a linear image of whitened coordinates."""

    hierarchical = False

    def __init__(self, spec: PriorSpec, grid: Grid):
        if spec.d != grid.d:
            raise ValueError("prior and grid dimensions differ")
        self.spec = spec
        self.grid = grid

    def dim(self, J=None) -> int:
        raise NotImplementedError

    def values(self, state: LatentState) -> np.ndarray:
        raise NotImplementedError

    def field(self, state: LatentState) -> GridField:
        return self.grid.field(self.values(state))

    def draw_state(self, rng, J=None) -> LatentState:
        return LatentState(rng.standard_normal(self.dim(J)), J)

    def initial_state(self, J=None) -> LatentState:
        return LatentState(np.zeros(self.dim(J)), J)


class MaternPrior(LatentPrior):
    def __init__(self, spec: PriorSpec, grid: Grid, sampler: GaussianSampler | None = None):
        super().__init__(spec, grid)
        self.sampler = sampler or build_sampler(
            grid, spec.alpha, spec.plateau, spec.support, spec.jitter
        )
        self.scale = spec.scaling

    def dim(self, J=None) -> int:
        return self.sampler.dim

    def values(self, state):
        return self.scale * self.sampler.base_values(state.z)


class SeriesPrior(LatentPrior):
    def __init__(self, spec: PriorSpec, grid: Grid, basis=None):
        super().__init__(spec, grid)
        self.hierarchical = spec.variant == HIERARCHICAL
        self.basis = basis or make_basis(grid, spec.basis, spec.region, spec.moments)
        self.chi = cutoff_field(grid, spec.plateau, spec.support)
        self.scale = spec.scaling
        self._blocks = {}

    @property
    def max_level(self) -> int:
        return self.basis.max_level

    def block(self, level: int) -> np.ndarray:
        """Synthesis columns of one level: chi * scale * 2**(-l alpha) * Psi_{l r}."""
        if level not in self._blocks:
            raw = self.basis.level_matrix(level)
            w = self.scale * level_weight(level, self.spec.alpha)
            self._blocks[level] = (self.chi.flat[:, None] * raw) * w
        return self._blocks[level]

    def level_sizes(self, J) -> list:
        return [self.block(lv).shape[1] for lv in range(-1, J + 1)]

    def dim(self, J=None) -> int:
        J = self.spec.level if J is None else J
        if J > self.max_level:
            raise UnsupportedLevel(f"level {J} exceeds grid resolution n={self.grid.n}")
        return int(sum(self.level_sizes(J)))

    def values(self, state):
        J = self.spec.level if state.J is None else state.J
        out = np.zeros(self.grid.size)
        start = 0
        for lv in range(-1, J + 1):
            B = self.block(lv)
            k = B.shape[1]
            out += B @ state.z[start : start + k]
            start += k
        return out

    def coefficients(self, state) -> SeriesCoefficients:
        """Basis coefficients of the (pre-cutoff) series."""
        J = self.spec.level if state.J is None else state.J
        vals = {}
        start = 0
        for lv, k in zip(range(-1, J + 1), self.level_sizes(J)):
            vals[lv] = self.scale * level_weight(lv, self.spec.alpha) * state.z[start : start + k]
            start += k
        return SeriesCoefficients(J, vals)

    def draw_state(self, rng, J=None):
        if J is None:
            J = sample_truncation_level(self.grid.d, rng) if self.hierarchical else self.spec.level
        return LatentState(rng.standard_normal(self.dim(J)), J)

    def initial_state(self, J=None):
        if J is None:
            J = 1 if self.hierarchical else self.spec.level
        return LatentState(np.zeros(self.dim(J)), J)


def build_prior(spec: PriorSpec, grid: Grid) -> LatentPrior:
    if spec.variant == MATERN:
        return MaternPrior(spec, grid)
    return SeriesPrior(spec, grid)


def draw_prior(spec: PriorSpec, grid_or_prior, rng):
    """One prior draw: ``(latent field, SeriesCoefficients or None)``."""
    prior = grid_or_prior if isinstance(grid_or_prior, LatentPrior) else build_prior(spec, grid_or_prior)
    state = prior.draw_state(rng)
    F = prior.field(state)
    coeffs = prior.coefficients(state) if isinstance(prior, SeriesPrior) else None
    return F, coeffs


def j_min(basis, plateau) -> int | None:
    """Smallest level from which every indexed basis function sits inside the plateau."""
    a, b = plateau
    for level in range(0, basis.max_level + 1):
        ok = True
        for ix in basis.indices(level):
            sup = basis.support(ix)
            if sup is None or any(lo < a or hi > b for lo, hi in sup):
                ok = False
                break
        if ok:
            return level
    return None
