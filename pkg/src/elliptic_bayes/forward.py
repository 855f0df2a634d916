"""Finite-difference solver for div(f grad u) = g with homogeneous Dirichlet data."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import solveh_banded
from scipy.sparse.linalg import cg, splu

from .errors import NonPositiveConductivity, SolverDivergence
from .grid import GridField, eval_at_points
from .link import LinkTable, apply_link

log = logging.getLogger(__name__)

DIRECT_MAX_N = {1: 512, 2: 64}


@dataclass(frozen=True)
class SolverConfig:
    method: str = "auto"  # "auto" | "direct" | "cg"
    cg_tol: float = 1e-10
    cg_maxiter: int = 20000
    oracle_check: bool = False

    def __post_init__(self):
        if self.method not in ("auto", "direct", "cg"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if not self.cg_tol > 0:
            raise ValueError("cg_tol must be positive")

    def resolve(self, d: int, n: int) -> str:
        if self.method != "auto":
            return self.method
        return "direct" if n <= DIRECT_MAX_N[d] else "cg"


@dataclass(frozen=True, eq=False)
class SourceTerm:
    field: GridField
    strictly_positive: bool
    g_min: float

    @classmethod
    def from_field(cls, field: GridField) -> "SourceTerm":
        g_min = float(np.min(field.values))
        return cls(field=field, strictly_positive=g_min > 0, g_min=g_min)

    @classmethod
    def constant(cls, grid, value: float = 2.0) -> "SourceTerm":
        return cls.from_field(grid.constant(value))


def _check_positive(f: GridField):
    if np.min(f.values) <= 0:
        raise NonPositiveConductivity(f"min conductivity {np.min(f.values):.3g} <= 0")


def solve_1d_closed_form(f: GridField, g: GridField) -> GridField:
    """Reference 1D solution by double integration of the flux.

    ``u(x) = int_0^x (G(s) + c) / f(s) ds`` with ``G' = g`` and ``c`` fixed by
    ``u(1) = 0``; all integrals by the trapezoid rule on the grid.
    """
    if f.grid.d != 1:
        raise ValueError("closed-form solver is one-dimensional")
    _check_positive(f)
    x = f.grid.axis
    G = cumulative_trapezoid(g.values, x, initial=0.0)
    inv_f = 1.0 / f.values
    a = cumulative_trapezoid(G * inv_f, x, initial=0.0)
    b = cumulative_trapezoid(inv_f, x, initial=0.0)
    c = -a[-1] / b[-1]
    u = a + c * b
    u[0] = u[-1] = 0.0
    return f.with_values(u)


def _solve_1d(fv: np.ndarray, gv: np.ndarray, h: float) -> np.ndarray:
    fe = 0.5 * (fv[1:] + fv[:-1])  # edge conductivities
    diag = (fe[:-1] + fe[1:]) / h**2
    off = -fe[1:-1] / h**2
    ab = np.empty((2, diag.size))
    ab[0, 0] = 0.0
    ab[0, 1:] = off
    ab[1] = diag
    u = np.zeros_like(fv)
    u[1:-1] = solveh_banded(ab, -gv[1:-1], check_finite=False)
    return u


def assemble_2d(fv: np.ndarray, h: float) -> sp.csr_matrix:
    """SPD matrix of -div(f grad .) on interior nodes, row-major (x outer)."""
    n = fv.shape[0] - 1
    m = n - 1
    fx = 0.5 * (fv[1:, :] + fv[:-1, :])  # edges between x_i and x_{i+1}
    fy = 0.5 * (fv[:, 1:] + fv[:, :-1])
    west = fx[:-1, 1:-1]
    east = fx[1:, 1:-1]
    south = fy[1:-1, :-1]
    north = fy[1:-1, 1:]
    diag = (west + east + south + north).ravel() / h**2
    idx = np.arange(m * m).reshape(m, m)
    rows, cols, vals = [idx.ravel()], [idx.ravel()], [diag]
    # x-neighbours (i, j) <-> (i+1, j)
    rows.append(idx[:-1, :].ravel())
    cols.append(idx[1:, :].ravel())
    vals.append(-east[:-1, :].ravel() / h**2)
    # y-neighbours (i, j) <-> (i, j+1)
    rows.append(idx[:, :-1].ravel())
    cols.append(idx[:, 1:].ravel())
    vals.append(-north[:, :-1].ravel() / h**2)
    r = np.concatenate(rows[1:])
    c = np.concatenate(cols[1:])
    v = np.concatenate(vals[1:])
    A = sp.coo_matrix(
        (
            np.concatenate([vals[0], v, v]),
            (np.concatenate([rows[0], r, c]), np.concatenate([cols[0], c, r])),
        ),
        shape=(m * m, m * m),
    )
    return A.tocsr()


def _solve_2d(fv, gv, h, method, cfg: SolverConfig):
    A = assemble_2d(fv, h)
    rhs = -gv[1:-1, 1:-1].ravel()
    if method == "direct":
        x = splu(A.tocsc()).solve(rhs)
    else:
        M = sp.diags(1.0 / A.diagonal())
        x, info = cg(A, rhs, rtol=cfg.cg_tol, atol=0.0, maxiter=cfg.cg_maxiter, M=M)
        if info != 0:
            raise SolverDivergence(f"CG did not converge in {cfg.cg_maxiter} iterations")
    u = np.zeros_like(fv)
    u[1:-1, 1:-1] = x.reshape(fv.shape[0] - 2, -1)
    return u


def _solve_1d_cg(fv, gv, h, cfg: SolverConfig):
    n = fv.size - 1
    fe = 0.5 * (fv[1:] + fv[:-1])
    A = sp.diags(
        [-fe[1:-1], fe[:-1] + fe[1:], -fe[1:-1]], [-1, 0, 1], shape=(n - 1, n - 1)
    ).tocsr() / h**2
    M = sp.diags(1.0 / A.diagonal())
    x, info = cg(A, -gv[1:-1], rtol=cfg.cg_tol, atol=0.0, maxiter=cfg.cg_maxiter, M=M)
    if info != 0:
        raise SolverDivergence(f"CG did not converge in {cfg.cg_maxiter} iterations")
    u = np.zeros_like(fv)
    u[1:-1] = x
    return u


def solve_fd(f: GridField, g: GridField, cfg: SolverConfig | None = None) -> GridField:
    """Conservative flux-form solve with arithmetic edge averages of ``f``."""
    cfg = cfg or SolverConfig()
    _check_positive(f)
    grid = f.grid
    method = cfg.resolve(grid.d, grid.n)
    if grid.d == 1:
        if method == "direct":
            u = _solve_1d(f.values, g.values, grid.h)
        else:
            u = _solve_1d_cg(f.values, g.values, grid.h, cfg)
    else:
        u = _solve_2d(f.values, g.values, grid.h, method, cfg)
    out = f.with_values(u)
    if cfg.oracle_check and grid.d == 1:
        gap = np.max(np.abs(u - solve_1d_closed_form(f, g).values))
        if gap > 1e-4:
            log.warning("FD solve deviates from closed-form oracle by %.3g", gap)
    return out


def forward_map(F: GridField, link: LinkTable, g: SourceTerm, cfg: SolverConfig | None = None) -> GridField:
    """The composed map F -> G(Phi o F)."""
    return solve_fd(apply_link(link, F), g.field, cfg)


def predict_at_design(F: GridField, link: LinkTable, g: SourceTerm, cfg, points) -> np.ndarray:
    return eval_at_points(forward_map(F, link, g, cfg), points)
