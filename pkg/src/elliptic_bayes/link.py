"""Regular link function built by mollifying a C^1 reciprocal/affine profile.

The profile ``phi(t) = 1/(1-t)`` for ``t < 0`` and ``1 + t`` for ``t >= 0`` is
convolved with the standard bump ``psi(s) ~ exp(-1/(1-s^2))`` and rescaled so
that ``Phi(0) = 1`` and ``Phi -> K_min`` at minus infinity.  Values are
tabulated once and evaluated by cubic Hermite interpolation; outside the table
closed-form tails are used.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline

from .errors import NormalizationFailure, ValueBelowKmin
from .grid import GridField

GL_NODES = 96
TAIL_TERMS = 8


def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


def _bump_prime(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    si = s[inside]
    out[inside] = np.exp(-1.0 / (1.0 - si**2)) * (-2.0 * si / (1.0 - si**2) ** 2)
    return out


def profile(t):
    """The un-mollified C^1 profile ``phi``."""
    t = np.asarray(t, dtype=float)
    return np.where(t < 0, 1.0 / (1.0 - np.minimum(t, 0.0)), 1.0 + np.maximum(t, 0.0))


def _panel(a, b, nodes, wts):
    """Map GL nodes on [-1, 1] to panels [a_i, b_i]; returns (points, weights)."""
    half = 0.5 * (b - a)[:, None]
    mid = 0.5 * (b + a)[:, None]
    return mid + half * nodes[None, :], half * wts[None, :]


def _convolve(t, kernel, c_norm):
    """(kernel * profile)(t) with the kink of the profile split out of the panels."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    nodes, wts = np.polynomial.legendre.leggauss(GL_NODES)
    split = np.clip(t, -1.0, 1.0)
    # panel A: s in [-1, split] -> t - s >= 0 (affine branch)
    sa, wa = _panel(np.full_like(t, -1.0), split, nodes, wts)
    # panel B: s in [split, 1] -> t - s <= 0 (reciprocal branch)
    sb, wb = _panel(split, np.full_like(t, 1.0), nodes, wts)
    ta = t[:, None] - sa
    tb = t[:, None] - sb
    va = np.sum(wa * kernel(sa) * (1.0 + np.maximum(ta, 0.0)), axis=1)
    vb = np.sum(wb * kernel(sb) / (1.0 - np.minimum(tb, 0.0)), axis=1)
    return (va + vb) / c_norm


@dataclass(frozen=True, eq=False)
class LinkTable:
    k_min: float
    t: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    conv_at_zero: float
    bump_mass: float
    even_moments: np.ndarray
    _spline: CubicHermiteSpline = field(repr=False)
    _dspline: object = field(repr=False)

    @property
    def t_lo(self) -> float:
        return float(self.t[0])

    @property
    def t_hi(self) -> float:
        return float(self.t[-1])

    @property
    def step(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def scale(self) -> float:
        return (1.0 - self.k_min) / self.conv_at_zero

    def _left_tail(self, t):
        u = 1.0 - t
        k = np.arange(len(self.even_moments))
        conv = np.sum(self.even_moments[None, :] / u[:, None] ** (2 * k + 1), axis=1)
        dconv = np.sum(
            (2 * k + 1) * self.even_moments[None, :] / u[:, None] ** (2 * k + 2), axis=1
        )
        return self.k_min + self.scale * conv, self.scale * dconv

    def __call__(self, t):
        """Evaluate Phi at ``t`` (scalar or array)."""
        return self.evaluate(t)[0]

    def derivative(self, t):
        return self.evaluate(t)[1]

    def evaluate(self, t):
        """Return ``(Phi(t), Phi'(t))``."""
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        val = np.empty_like(t)
        der = np.empty_like(t)
        lo = t < self.t_lo
        hi = t > self.t_hi
        mid = ~(lo | hi)
        if np.any(mid):
            val[mid] = self._spline(t[mid])
            der[mid] = self._dspline(t[mid])
        if np.any(lo):
            val[lo], der[lo] = self._left_tail(t[lo])
        if np.any(hi):
            # beyond the bump support the affine branch is reproduced exactly
            val[hi] = self.k_min + self.scale * (1.0 + t[hi])
            der[hi] = self.scale
        if scalar:
            return float(val[0]), float(der[0])
        return val, der

    def inverse(self, values, tol: float = 1e-9):
        """Vectorised inverse by bracketing bisection then Newton polish."""
        scalar = np.ndim(values) == 0
        v = np.atleast_1d(np.asarray(values, dtype=float))
        if np.any(v <= self.k_min):
            raise ValueBelowKmin(f"values must exceed K_min={self.k_min}")
        lo = np.full_like(v, self.t_lo)
        hi = np.full_like(v, self.t_hi)
        while np.any(self(lo) > v):
            lo = np.where(self(lo) > v, 2.0 * lo, lo)
        while np.any(self(hi) < v):
            hi = np.where(self(hi) < v, 2.0 * hi, hi)
        for _ in range(60):
            m = 0.5 * (lo + hi)
            below = self(m) < v
            lo = np.where(below, m, lo)
            hi = np.where(below, hi, m)
            if np.max(hi - lo) < 1e-6:
                break
        x = 0.5 * (lo + hi)
        for _ in range(50):
            val, der = self.evaluate(x)
            r = val - v
            if np.max(np.abs(r)) <= tol * 1e-2:
                break
            x = np.clip(x - r / der, lo, hi)
        if scalar:
            return float(x[0])
        return x

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "phi", "dphi"])
            for row in zip(self.t, self.phi, self.dphi):
                w.writerow([repr(float(x)) for x in row])


def build_link(k_min: float = 0.1, table_range: float = 10.0, table_step: float = 1e-3) -> LinkTable:
    """Tabulate the link on ``[-table_range, table_range]``.

    Raises :class:`NormalizationFailure` if the Gauss-Legendre mass of the bump
    disagrees with adaptive quadrature by more than 1e-8, and ``ValueError`` if
    any tabulated invariant (monotonicity, positivity, ``Phi(0) = 1``) fails.
    """
    if not 0.0 < k_min < 1.0:
        raise ValueError("k_min must lie in (0, 1)")
    if table_range < 10.0:
        raise ValueError("table_range must be at least 10")
    if not 0.0 < table_step <= 1e-3:
        raise ValueError("table_step must be in (0, 1e-3]")

    nodes, wts = np.polynomial.legendre.leggauss(GL_NODES)
    mass = float(np.sum(wts * _bump(nodes)))
    ref, _ = integrate.quad(lambda s: float(_bump(s)), -1.0, 1.0, epsabs=1e-14, epsrel=1e-13)
    if abs(mass / ref - 1.0) > 1e-8:
        raise NormalizationFailure(f"bump mass {mass} vs adaptive quadrature {ref}")
    moments = np.array(
        [np.sum(wts * nodes ** (2 * k) * _bump(nodes)) / mass for k in range(TAIL_TERMS)]
    )

    count = int(round(2 * table_range / table_step)) + 1
    t = np.linspace(-table_range, table_range, count)
    conv0 = float(_convolve(np.array([0.0]), _bump, mass)[0])
    scale = (1.0 - k_min) / conv0
    phi = k_min + scale * _convolve(t, _bump, mass)
    dphi = scale * _convolve(t, _bump_prime, mass)

    _check_table(k_min, t, phi, dphi)
    spline = CubicHermiteSpline(t, phi, dphi)
    return LinkTable(
        k_min=float(k_min),
        t=t,
        phi=phi,
        dphi=dphi,
        conv_at_zero=conv0,
        bump_mass=mass,
        even_moments=moments,
        _spline=spline,
        _dspline=spline.derivative(),
    )


def _check_table(k_min, t, phi, dphi):
    if np.any(np.diff(phi) <= 0):
        raise ValueError("tabulated link is not strictly increasing")
    if np.any(phi <= k_min):
        raise ValueError("tabulated link reaches K_min")
    if np.any(dphi <= 0):
        raise ValueError("tabulated derivative is not positive")
    if np.any(np.diff(dphi) < -1e-12):
        raise ValueError("tabulated derivative is not nondecreasing")
    i0 = int(np.argmin(np.abs(t)))
    if abs(t[i0]) < 1e-15 and abs(phi[i0] - 1.0) > 1e-10:
        raise ValueError(f"Phi(0) = {phi[i0]!r} differs from 1")
    # Fritsch-Carlson: Hermite data with these slopes keeps the cubic monotone
    secant = np.diff(phi) / np.diff(t)
    a = dphi[:-1] / secant
    b = dphi[1:] / secant
    if np.any(a**2 + b**2 > 9.0):
        raise ValueError("tabulation too coarse for a monotone cubic interpolant")


def apply_link(link: LinkTable, field: GridField) -> GridField:
    """Conductivity ``f = Phi o F`` node by node."""
    return field.with_values(link(field.values.ravel()).reshape(field.values.shape))


def invert_link(link: LinkTable, value):
    return link.inverse(value)
