"""Orthonormal multiresolution bases sampled on dyadic grids.

Two providers share one interface:

* ``DaubechiesBasis`` -- periodised Daubechies wavelets on [0, 1], point
  values computed by the cascade algorithm (exact at dyadic points).
* ``SineBasis`` -- ``sqrt(2) sin(k pi x)`` grouped into dyadic frequency
  bands; smooth and orthonormal but globally supported.

Level ``-1`` holds the coarse scaling part, levels ``l >= 0`` the details at
resolution ``2**l``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import pywt

from .errors import UnsupportedLevel
from .grid import Grid, GridField


@lru_cache(maxsize=None)
def daubechies_filter(moments: int) -> np.ndarray:
    """Low-pass reconstruction taps, normalised so that they sum to sqrt(2)."""
    return np.asarray(pywt.Wavelet(f"db{moments}").rec_lo, dtype=float)


def _integer_values(h: np.ndarray) -> np.ndarray:
    """phi(0..L-1) as the unit-eigenvector of the two-scale operator."""
    L = h.size
    A = np.zeros((L, L))
    for j in range(L):
        for m in range(L):
            k = 2 * j - m
            if 0 <= k < L:
                A[j, m] = np.sqrt(2.0) * h[k]
    w, v = np.linalg.eig(A)
    i = int(np.argmin(np.abs(w - 1.0)))
    phi = np.real(v[:, i])
    return phi / phi.sum()


@lru_cache(maxsize=None)
def cascade(moments: int, depth: int):
    """Scaling function and wavelet at the points ``k / 2**depth`` of ``[0, L-1]``.

    Returns ``(phi, psi)``, each of length ``(L - 1) * 2**depth + 1``.
    """
    h = daubechies_filter(moments)
    L = h.size
    g = np.array([(-1) ** k * h[L - 1 - k] for k in range(L)])
    phi = _integer_values(h)
    for s in range(1, depth + 1):
        phi = _refine(phi, h, s)
    # psi(x) = sqrt(2) sum_k g_k phi(2x - k); 2x - k lives on the grid one level coarser
    if depth == 0:
        coarse, step = _integer_values(h), 1
        fine_len = L
    else:
        coarse, step = phi[::2], 2 ** (depth - 1)
        fine_len = phi.size
    psi = np.zeros(fine_len)
    if depth == 0:
        # integer points: 2x - k is integer too
        for x in range(L):
            for k in range(L):
                j = 2 * x - k
                if 0 <= j < L:
                    psi[x] += np.sqrt(2.0) * g[k] * coarse[j]
    else:
        # fine index i corresponds to x = i / 2**depth, 2x - k = i / 2**(depth-1) - k
        for k in range(L):
            shift = k * step
            lo = shift
            hi = min(fine_len, coarse.size + shift)
            if hi > lo:
                psi[lo:hi] += np.sqrt(2.0) * g[k] * coarse[: hi - lo]
    phi.setflags(write=False)
    psi.setflags(write=False)
    return phi, psi


def _refine(prev: np.ndarray, h: np.ndarray, s: int) -> np.ndarray:
    """Values on the grid 2**-s from values on the grid 2**-(s-1)."""
    L = h.size
    new = np.zeros((L - 1) * 2**s + 1)
    stride = 2 ** (s - 1)
    # phi(i / 2**s) = sqrt(2) sum_k h_k phi(i / 2**(s-1) - k) -> prev index i - k * stride
    for k in range(L):
        off = k * stride
        hi = min(new.size, prev.size + off)
        if hi > off:
            new[off:hi] += np.sqrt(2.0) * h[k] * prev[: hi - off]
    return new


def _periodise(table: np.ndarray, level: int, r: int, n: int) -> np.ndarray:
    """Sample ``2**(l/2) f(2**l x - r)`` (periodised) on the nodes ``i / n``."""
    q = int(np.log2(n)) - level
    idx = (np.arange(table.size) + r * 2**q) % n
    out = np.zeros(n + 1)
    np.add.at(out, idx, table)
    out[n] = out[0]
    return out * 2 ** (level / 2)


@dataclass(frozen=True)
class BasisIndex:
    level: int
    index: tuple  # translation (1D: (r,), 2D: (r1, r2))
    kind: int = 0  # 2D detail type: 0 = psi x phi, 1 = phi x psi, 2 = psi x psi


def _meets_periodic(lo: float, hi: float, region: tuple) -> bool:
    """Does [lo, hi] modulo 1 intersect [a, b]?"""
    a, b = region
    if hi - lo >= 1.0:
        return True
    for shift in (-1.0, 0.0, 1.0):
        if lo + shift <= b and hi + shift >= a:
            return True
    return False


class _Provider:
    name = "base"

    def __init__(self, grid: Grid, region=(0.25, 0.75)):
        self.grid = grid
        self.region = tuple(float(v) for v in region)

    @property
    def max_level(self) -> int:
        return int(np.log2(self.grid.n))

    def check_level(self, level: int):
        if level > self.max_level:
            raise UnsupportedLevel(
                f"level {level} exceeds grid resolution n={self.grid.n}"
            )

    def indices(self, level: int) -> list:
        """Enumerate the basis indices at ``level`` whose support meets the region."""
        raise NotImplementedError

    def synthesize(self, idx: BasisIndex) -> GridField:
        raise NotImplementedError

    def support(self, idx: BasisIndex):
        """Per-axis support intervals (unwrapped) or ``None`` for global support."""
        return None

    def level_matrix(self, level: int) -> np.ndarray:
        """Columns = flattened basis fields of one level."""
        cols = [self.synthesize(ix).flat for ix in self.indices(level)]
        if not cols:
            return np.zeros((self.grid.size, 0))
        return np.column_stack(cols)


class DaubechiesBasis(_Provider):
    name = "daubechies"

    def __init__(self, grid: Grid, region=(0.25, 0.75), moments: int = 6):
        if moments < 6:
            raise ValueError("need at least 6 vanishing moments")
        super().__init__(grid, region)
        self.moments = moments
        self.length = 2 * moments  # filter length; support is [0, length - 1]

    def _tables(self, level):
        q = int(np.log2(self.grid.n)) - level
        return cascade(self.moments, q)

    def _axis_function(self, level: int, r: int, which: str) -> np.ndarray:
        if level < 0:
            return np.ones(self.grid.n + 1)
        phi, psi = self._tables(level)
        return _periodise(psi if which == "psi" else phi, level, r, self.grid.n)

    def _axis_support(self, level, r):
        if level < 0:
            return (0.0, 1.0 + 1e-9)
        return (r / 2**level, (r + self.length - 1) / 2**level)

    def support(self, idx: BasisIndex):
        return [self._axis_support(idx.level, r) for r in idx.index]

    def indices(self, level: int) -> list:
        self.check_level(level)
        d = self.grid.d
        if level < 0:
            return [BasisIndex(-1, (0,) * d)]
        rs = range(2**level)
        out = []
        if d == 1:
            for r in rs:
                if _meets_periodic(*self._axis_support(level, r), self.region):
                    out.append(BasisIndex(level, (r,)))
            return out
        meets = [_meets_periodic(*self._axis_support(level, r), self.region) for r in rs]
        for kind in range(3):
            for r1 in rs:
                for r2 in rs:
                    if meets[r1] and meets[r2]:
                        out.append(BasisIndex(level, (r1, r2), kind))
        return out

    def synthesize(self, idx: BasisIndex) -> GridField:
        self.check_level(idx.level)
        if self.grid.d == 1:
            vals = self._axis_function(idx.level, idx.index[0], "psi")
            return self.grid.field(vals)
        if idx.level < 0:
            return self.grid.constant(1.0)
        kinds = {0: ("psi", "phi"), 1: ("phi", "psi"), 2: ("psi", "psi")}[idx.kind]
        ax = self._axis_function(idx.level, idx.index[0], kinds[0])
        ay = self._axis_function(idx.level, idx.index[1], kinds[1])
        return self.grid.field(np.outer(ax, ay))


class SineBasis(_Provider):
    """Diagnostic provider; orthonormal but not compactly supported."""

    name = "sine"

    def _band(self, level):
        return range(2**level, 2 ** (level + 1))

    def check_level(self, level: int):
        # frequencies up to n - 1 are resolvable on n + 1 nodes
        if level >= 0 and 2**level >= self.grid.n:
            raise UnsupportedLevel(f"level {level} exceeds grid resolution n={self.grid.n}")

    @property
    def max_level(self) -> int:
        return int(np.log2(self.grid.n)) - 1

    def indices(self, level: int) -> list:
        self.check_level(level)
        if level < 0:
            return []
        if self.grid.d == 1:
            return [BasisIndex(level, (k,)) for k in self._band(level)]
        top = 2 ** (level + 1)
        return [
            BasisIndex(level, (k1, k2))
            for k1 in range(1, top)
            for k2 in range(1, top)
            if max(k1, k2) >= 2**level
        ]

    def synthesize(self, idx: BasisIndex) -> GridField:
        self.check_level(idx.level)
        x = self.grid.axis
        parts = [np.sqrt(2.0) * np.sin(k * np.pi * x) for k in idx.index]
        if self.grid.d == 1:
            return self.grid.field(parts[0])
        return self.grid.field(np.outer(parts[0], parts[1]))


def make_basis(grid: Grid, provider: str = "daubechies", region=(0.25, 0.75), moments: int = 6):
    if provider == "daubechies":
        return DaubechiesBasis(grid, region, moments)
    if provider == "sine":
        return SineBasis(grid, region)
    raise ValueError(f"unknown basis provider {provider!r}")


def synthesize_basis(level: int, index, grid: Grid, provider: str = "daubechies", kind: int = 0, **kw) -> GridField:
    """Sample one basis function on ``grid``."""
    basis = make_basis(grid, provider, **kw)
    index = tuple(np.atleast_1d(index).tolist())
    return basis.synthesize(BasisIndex(level, index, kind))
