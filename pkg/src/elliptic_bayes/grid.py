"""Regular dyadic grids on the unit interval / unit square.

Every field in the package (conductivities, latent fields, PDE solutions,
source terms) is a :class:`GridField`: node values on a uniform grid with
``n + 1`` nodes per axis, boundary nodes included.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import InvalidResolution, PointOutsideDomain, ResolutionTooCoarse

_BOUNDARY_SLACK = 1e-12


@dataclass(frozen=True)
class DomainSpec:
    d: int
    n: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise InvalidResolution(f"dimension must be 1 or 2, got {self.d}")
        n = int(self.n)
        if n < 4 or n & (n - 1):
            raise InvalidResolution(f"n must be a power of two >= 4, got {self.n}")


@dataclass(frozen=True)
class Grid:
    spec: DomainSpec

    @property
    def d(self) -> int:
        return self.spec.d

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple:
        return (self.n + 1,) * self.d

    @property
    def size(self) -> int:
        return (self.n + 1) ** self.d

    @cached_property
    def axis(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n + 1)

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(size, d)``, row-major (x outer, y inner)."""
        if self.d == 1:
            return self.axis[:, None].copy()
        xx, yy = np.meshgrid(self.axis, self.axis, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    @cached_property
    def mesh(self) -> tuple:
        """Coordinate arrays broadcastable against node values."""
        if self.d == 1:
            return (self.axis,)
        return tuple(np.meshgrid(self.axis, self.axis, indexing="ij"))

    @cached_property
    def weights(self) -> np.ndarray:
        """Tensor trapezoid weights, same shape as node values."""
        w = np.full(self.n + 1, self.h)
        w[0] = w[-1] = 0.5 * self.h
        if self.d == 1:
            return w
        return np.outer(w, w)

    @cached_property
    def interior(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        if self.d == 1:
            mask[1:-1] = True
        else:
            mask[1:-1, 1:-1] = True
        return mask

    def field(self, values) -> "GridField":
        return GridField(self, np.asarray(values, dtype=float).reshape(self.shape))

    def sample(self, func) -> "GridField":
        """Evaluate ``func(*coordinate_arrays)`` at every node."""
        return self.field(np.broadcast_to(func(*self.mesh), self.shape))

    def zeros(self) -> "GridField":
        return self.field(np.zeros(self.shape))

    def constant(self, value: float) -> "GridField":
        return self.field(np.full(self.shape, float(value)))


def build_grid(spec: DomainSpec | None = None, *, d: int | None = None, n: int | None = None) -> Grid:
    """Build the uniform grid for ``spec`` (or for ``d``/``n`` given directly)."""
    if spec is None:
        spec = DomainSpec(d=d, n=n)
    return Grid(spec)


@dataclass(frozen=True, eq=False)
class GridField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            if vals.size != self.grid.size:
                raise ValueError(
                    f"expected {self.grid.size} node values, got {vals.size}"
                )
            vals = vals.reshape(self.grid.shape)
        if not np.all(np.isfinite(vals)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", vals)

    def with_values(self, values) -> "GridField":
        return GridField(self.grid, values)

    def __add__(self, other):
        return self.with_values(self.values + _vals(other))

    def __sub__(self, other):
        return self.with_values(self.values - _vals(other))

    def __mul__(self, other):
        return self.with_values(self.values * _vals(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))


def _vals(other):
    return other.values if isinstance(other, GridField) else other


def quadrature_l2(field: GridField) -> float:
    """L2 norm on the unit domain by the (tensor) trapezoid rule."""
    return float(np.sqrt(np.sum(field.grid.weights * field.values**2)))


def inner_product(a: GridField, b: GridField) -> float:
    return float(np.sum(a.grid.weights * a.values * b.values))


def _first_diff(v: np.ndarray, h: float, axis: int) -> np.ndarray:
    return np.gradient(v, h, axis=axis, edge_order=2)


def _second_diff(v: np.ndarray, h: float, axis: int) -> np.ndarray:
    v = np.moveaxis(v, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h**2
    # second-order one-sided stencils at the two ends
    out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h**2
    out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h**2
    return np.moveaxis(out, 0, axis)


def derivatives(field: GridField, order: int) -> list:
    """Finite-difference partial derivatives, one array per multi-index of ``order``."""
    g = field.grid
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if g.n + 1 < 4:
        raise ResolutionTooCoarse(f"n={g.n} too coarse for order {order} stencils")
    v = field.values
    if order == 1:
        return [_first_diff(v, g.h, ax) for ax in range(g.d)]
    if g.d == 1:
        return [_second_diff(v, g.h, 0)]
    return [
        _second_diff(v, g.h, 0),
        _first_diff(_first_diff(v, g.h, 0), g.h, 1),
        _second_diff(v, g.h, 1),
    ]


def sobolev_seminorm(field: GridField, order: int) -> float:
    """L2 norm of the order-th derivatives, summed over multi-indices."""
    w = field.grid.weights
    total = sum(np.sum(w * dv**2) for dv in derivatives(field, order))
    return float(np.sqrt(total))


def h2_norm(field: GridField) -> float:
    return float(
        np.sqrt(
            quadrature_l2(field) ** 2
            + sobolev_seminorm(field, 1) ** 2
            + sobolev_seminorm(field, 2) ** 2
        )
    )


def c1_norm(field: GridField) -> float:
    """Discrete C^1 norm: sup |v| plus the largest first difference."""
    grads = derivatives(field, 1)
    return field.sup() + max(float(np.max(np.abs(dv))) for dv in grads)


def eval_at_points(field: GridField, points) -> np.ndarray:
    """Piecewise-linear (1D) or bilinear (2D) interpolation at arbitrary points."""
    g = field.grid
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return np.zeros(0)
    pts = pts.reshape(-1, g.d)
    if np.any(pts < -_BOUNDARY_SLACK) or np.any(pts > 1.0 + _BOUNDARY_SLACK):
        raise PointOutsideDomain("query point outside the closed unit domain")
    pts = np.clip(pts, 0.0, 1.0)
    if g.d == 1:
        return np.interp(pts[:, 0], g.axis, field.values)
    return bilinear(field.values, g.n, pts)


def bilinear(values: np.ndarray, n: int, pts: np.ndarray) -> np.ndarray:
    s = pts * n
    i = np.minimum(np.floor(s).astype(int), n - 1)
    t = s - i
    ix, iy = i[:, 0], i[:, 1]
    tx, ty = t[:, 0], t[:, 1]
    return (
        values[ix, iy] * (1 - tx) * (1 - ty)
        + values[ix + 1, iy] * tx * (1 - ty)
        + values[ix, iy + 1] * (1 - tx) * ty
        + values[ix + 1, iy + 1] * tx * ty
    )


def write_field_csv(field: GridField, path) -> None:
    g = field.grid
    header = ["x", "value"] if g.d == 1 else ["x", "y", "value"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for c, v in zip(g.coords, field.flat):
            w.writerow([repr(float(x)) for x in c] + [repr(float(v))])


def read_field_csv(path) -> GridField:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    d = len(header) - 1
    size = len(body)
    n = round(size ** (1.0 / d)) - 1
    grid = build_grid(d=d, n=n)
    vals = np.array([float(r[-1]) for r in body])
    coords = np.array([[float(x) for x in r[:-1]] for r in body])
    if not np.allclose(coords, grid.coords, atol=1e-12):
        raise ValueError(f"{path}: node coordinates do not form a regular grid")
    return grid.field(vals)
