"""Synthetic regression data Y_i = G(F)(X_i) + sigma W_i, likelihood and distances."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .forward import SolverConfig, SourceTerm, forward_map
from .grid import Grid, GridField, quadrature_l2
from .link import LinkTable


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray  # (N, d)
    Y: np.ndarray  # (N,)
    sigma: float
    seed: int | None = None
    truth_id: str = ""

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        X = X.reshape(len(X), -1) if X.ndim != 2 else X
        Y = np.asarray(self.Y, dtype=float).ravel()
        if X.shape[0] != Y.shape[0]:
            raise ValueError("X and Y lengths differ")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if np.any(X <= 0.0) or np.any(X >= 1.0):
            raise ValueError("design points must lie in the open domain")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def N(self) -> int:
        return self.Y.size

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def permuted(self, perm) -> "Dataset":
        return Dataset(self.X[perm], self.Y[perm], self.sigma, self.seed, self.truth_id)


def interpolation_matrix(grid: Grid, points) -> sp.csr_matrix:
    """Sparse matrix mapping flat node values to (bi)linear interpolants at ``points``."""
    pts = np.asarray(points, dtype=float).reshape(-1, grid.d)
    n = grid.n
    s = np.clip(pts, 0.0, 1.0) * n
    i = np.minimum(np.floor(s).astype(int), n - 1)
    t = s - i
    rows = np.arange(len(pts))
    if grid.d == 1:
        r = np.concatenate([rows, rows])
        c = np.concatenate([i[:, 0], i[:, 0] + 1])
        v = np.concatenate([1 - t[:, 0], t[:, 0]])
    else:
        stride = n + 1
        ix, iy, tx, ty = i[:, 0], i[:, 1], t[:, 0], t[:, 1]
        r = np.tile(rows, 4)
        c = np.concatenate(
            [ix * stride + iy, (ix + 1) * stride + iy, ix * stride + iy + 1, (ix + 1) * stride + iy + 1]
        )
        v = np.concatenate([(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty])
    return sp.csr_matrix((v, (r, c)), shape=(len(pts), grid.size))


def generate_dataset(F0: GridField, link: LinkTable, g: SourceTerm, cfg: SolverConfig | None,
                     N: int, sigma: float, seed, truth_id: str = "") -> Dataset:
    """Draw X_i uniformly on the domain and add Gaussian noise to G(F0)(X_i)."""
    if N < 1:
        raise ValueError("N must be at least 1")
    rng = np.random.default_rng(seed)
    d = F0.grid.d
    X = rng.uniform(0.0, 1.0, size=(N, d))
    # the open unit cube: a draw of exactly 0 has probability zero but guard anyway
    X = np.clip(X, np.finfo(float).tiny, np.nextafter(1.0, 0.0))
    u = forward_map(F0, link, g, cfg)
    clean = interpolation_matrix(F0.grid, X) @ u.flat
    Y = clean + sigma * rng.standard_normal(N)
    return Dataset(X, Y, float(sigma), None if seed is None else int(seed), truth_id)


def sample_sigma(data: Dataset) -> float:
    """Plug-in noise level from the sample standard deviation of the Y_i."""
    return float(np.std(data.Y, ddof=1))


class Likelihood:
    """Joint log-likelihood ``-(1/2 sigma^2) sum_i (Y_i - G(F)(X_i))^2``.

    Keeps the design interpolation matrix and a small memo of recent forward
    solves so that accept/reject bookkeeping never repeats a solve.
    """

    def __init__(self, data: Dataset, grid: Grid, link: LinkTable, g: SourceTerm,
                 cfg: SolverConfig | None = None, memo: int = 4):
        if data.sigma <= 0:
            raise ValueError("likelihood needs sigma > 0")
        if data.d != grid.d:
            raise ValueError("dataset and grid dimensions differ")
        self.data = data
        self.grid = grid
        self.link = link
        self.source = g
        self.cfg = cfg or SolverConfig()
        self.design = interpolation_matrix(grid, data.X)
        self._memo = {}
        self._memo_size = memo
        self.solves = 0

    def solve(self, F: GridField) -> GridField:
        key = F.values.tobytes()
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        u = forward_map(F, self.link, self.source, self.cfg)
        self.solves += 1
        if len(self._memo) >= self._memo_size:
            self._memo.pop(next(iter(self._memo)))
        self._memo[key] = u
        return u

    def predict(self, F: GridField) -> np.ndarray:
        return self.design @ self.solve(F).flat

    def __call__(self, F: GridField) -> float:
        r = self.data.Y - self.predict(F)
        return float(-0.5 * np.dot(r, r) / self.data.sigma**2)


def log_likelihood(F: GridField, data: Dataset, link: LinkTable, g: SourceTerm, cfg=None) -> float:
    return Likelihood(data, F.grid, link, g, cfg)(F)


def kl_from_solutions(u0: GridField, u: GridField, sigma: float) -> float:
    """Per-observation KL(p_F0 || p_F) = ||u0 - u||^2 / (2 sigma^2)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return quadrature_l2(u0 - u) ** 2 / (2.0 * sigma**2)


def hellinger_from_solutions(u0: GridField, u: GridField, sigma: float) -> float:
    """Hellinger distance via the affinity integral of exp(-(u0-u)^2 / (8 sigma^2))."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    diff = (u0 - u).values
    affinity = float(np.sum(u0.grid.weights * np.exp(-(diff**2) / (8.0 * sigma**2))))
    return float(np.sqrt(max(2.0 - 2.0 * affinity, 0.0)))


def kl_divergence(F0, F, link, g, cfg, sigma) -> float:
    return kl_from_solutions(forward_map(F0, link, g, cfg), forward_map(F, link, g, cfg), sigma)


def hellinger_distance(F0, F, link, g, cfg, sigma) -> float:
    return hellinger_from_solutions(forward_map(F0, link, g, cfg), forward_map(F, link, g, cfg), sigma)


def write_dataset(data: Dataset, path) -> tuple:
    """Write ``<path>.csv`` (``x[,y],obs``) and the ``<path>.json`` sidecar."""
    base = Path(path)
    if base.suffix in (".csv", ".json"):
        base = base.with_suffix("")
    csv_path, meta_path = base.with_suffix(".csv"), base.with_suffix(".json")
    header = ["x", "obs"] if data.d == 1 else ["x", "y", "obs"]
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for x, y in zip(data.X, data.Y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])
    meta = {"N": data.N, "sigma": data.sigma, "seed": data.seed, "truth_id": data.truth_id}
    meta_path.write_text(json.dumps(meta, indent=2) + "\n")
    return csv_path, meta_path


def read_dataset(path) -> Dataset:
    base = Path(path)
    if base.suffix in (".csv", ".json"):
        base = base.with_suffix("")
    meta = json.loads(base.with_suffix(".json").read_text())
    with open(base.with_suffix(".csv"), newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    X = np.array([[float(v) for v in r[:-1]] for r in rows])
    Y = np.array([float(r[-1]) for r in rows])
    if len(Y) != meta["N"]:
        raise ValueError("sidecar N does not match the number of rows")
    return Dataset(X, Y, float(meta["sigma"]), meta.get("seed"), meta.get("truth_id", ""))
