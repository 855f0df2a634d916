"""Rate studies, theoretical exponents, slope fits and the stability diagnostic."""
from __future__ import annotations

import csv
import json
import logging
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np
import pywt
import scipy

from .errors import (
    DegenerateDenominator,
    DomainViolation,
    EllipticBayesError,
    InsufficientPoints,
    NonPositiveError,
)
from .forward import SolverConfig, SourceTerm, forward_map, solve_fd
from .grid import Grid, GridField, build_grid, c1_norm, h2_norm, quadrature_l2, write_field_csv
from .link import LinkTable, apply_link, build_link
from .mcmc import ChainConfig, chain_diagnostics, dump_chain, posterior_mean, run_chain
from .observation import (
    Dataset,
    Likelihood,
    generate_dataset,
    hellinger_from_solutions,
    kl_from_solutions,
    write_dataset,
)
from .priors import (
    HIERARCHICAL,
    MATERN,
    SIEVE,
    VARIANTS,
    MaternPrior,
    PriorSpec,
    SeriesPrior,
    build_sampler,
)

log = logging.getLogger(__name__)

METRICS = ("prediction", "parameter", "latent", "h2_prediction", "hellinger", "kl", "stability_ratio")
OUTSIDE_HYPOTHESES = "outside theorem hypotheses"


# --------------------------------------------------------------------------
# theoretical exponents


def _exact(x):
    """Exact rational for ints, Fractions and floats (binary value); inf stays float."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    x = float(x)
    if math.isinf(x):
        return x
    return Fraction(x)


@dataclass(frozen=True)
class Exponents:
    """Rate exponents; ``xi_exp`` multiplies ``log N`` in the hierarchical rate."""

    delta_exp: Fraction
    lam: Fraction
    xi_exp: Fraction
    rho: Fraction
    alpha_star: Fraction

    def as_floats(self) -> dict:
        return {k: float(v) for k, v in asdict(self).items()}


def theoretical_exponents(alpha, beta_reg=2, alpha0=None, a=2, d=1) -> Exponents:
    """Contraction exponents of the prediction, conductivity and hierarchical rates.

    ``beta_reg = inf`` is allowed and yields ``lam == delta_exp``.
    """
    al = _exact(alpha)
    be = _exact(beta_reg)
    al0 = al if alpha0 is None else _exact(alpha0)
    aa = _exact(a)
    dd = _exact(d)
    if not dd > 0:
        raise DomainViolation("d must be positive")
    if not al > 1 + dd / 2:
        raise DomainViolation(f"alpha must exceed 1 + d/2 = {float(1 + dd / 2)}")
    if not be >= 1:
        raise DomainViolation("beta_reg must be >= 1")
    if not al0 >= al:
        raise DomainViolation("alpha0 must be >= alpha")
    if not aa > 0:
        raise DomainViolation("a must be positive")
    delta = (al + 1) / (2 * al + 2 + dd)
    lam = delta if be == math.inf else delta * (be - 1) / (be + 1)
    xi = (al0 + 1) / (2 * al0 + 2 + dd)
    rho = xi * (al - 1) / (al + 1)
    star = (2 * al**3 + (2 + dd) * al**2 + (1 + aa + dd) * al + aa * dd / 2) * (al + 1) / (al - 1)
    return Exponents(delta, lam, xi, rho, star)


# --------------------------------------------------------------------------
# slope fit


def fit_loglog_slope(pairs) -> tuple:
    """Least-squares slope of ``log error`` on ``log N`` and its standard error."""
    pairs = list(pairs)
    if len(pairs) < 3:
        raise InsufficientPoints(f"need at least 3 (N, error) pairs, got {len(pairs)}")
    N = np.array([p[0] for p in pairs], dtype=float)
    e = np.array([p[1] for p in pairs], dtype=float)
    if np.any(~(N > 0)) or np.any(~(e > 0)):
        raise NonPositiveError("log-log fit needs positive N and errors")
    x, y = np.log(N), np.log(e)
    xc = x - x.mean()
    sxx = float(np.dot(xc, xc))
    if sxx == 0.0:
        raise InsufficientPoints("all N values coincide")
    slope = float(np.dot(xc, y - y.mean()) / sxx)
    resid = y - y.mean() - slope * xc
    stderr = math.sqrt(float(np.dot(resid, resid)) / (len(pairs) - 2) / sxx)
    return slope, stderr


# --------------------------------------------------------------------------
# stability estimate


def _source_field(g) -> GridField:
    return g.field if isinstance(g, SourceTerm) else g


def stability_ratio(f: GridField, f0: GridField, g, cfg: SolverConfig | None = None,
                    u0: GridField | None = None) -> float:
    """``||f - f0||_L2 / (||f||_C1 ||G(f) - G(f0)||_H2)`` on the grid."""
    gf = _source_field(g)
    u0 = solve_fd(f0, gf, cfg) if u0 is None else u0
    du = solve_fd(f, gf, cfg) - u0
    num = quadrature_l2(f - f0)
    den = c1_norm(f) * h2_norm(du)
    if den == 0.0 or num == 0.0:
        raise DegenerateDenominator("f coincides with f0 on the grid; ratio undefined")
    return num / den


def trig_profile(grid: Grid, coeffs) -> GridField:
    """``sum_k a_k cos(k pi x) + b_k sin(k pi x)`` (product over axes in 2D), ``coeffs`` of shape (d, K, 2)."""
    coeffs = np.asarray(coeffs, dtype=float).reshape(grid.d, -1, 2)
    vals = np.ones(grid.shape)
    for ax in range(grid.d):
        x = grid.mesh[ax]
        part = np.zeros(grid.shape)
        for k, (a, b) in enumerate(coeffs[ax], start=1):
            part += a * np.cos(k * np.pi * x) + b * np.sin(k * np.pi * x)
        vals = vals * part
    return grid.field(vals)


def smooth_perturbations(f0: GridField, count: int, amplitude: float, rng, terms: int = 3) -> list:
    """``f0 + amplitude * p / ||p||_inf`` with ``p`` a random trigonometric polynomial."""
    out = []
    for _ in range(count):
        p = trig_profile(f0.grid, rng.standard_normal((f0.grid.d, terms, 2)))
        out.append(f0 + p * (amplitude / p.sup()))
    return out


@dataclass
class StabilityResult:
    ratios: list  # float or None where skipped
    flags: list  # "" or reason
    max_ratio: float | None


def stability_diagnostic(f_samples, f0: GridField, g, cfg: SolverConfig | None = None) -> StabilityResult:
    gf = _source_field(g)
    if not np.min(gf.values) > 0:
        raise DomainViolation("stability diagnostic needs a strictly positive source")
    u0 = solve_fd(f0, gf, cfg)
    ratios, flags = [], []
    for f in f_samples:
        try:
            ratios.append(stability_ratio(f, f0, gf, cfg, u0=u0))
            flags.append("")
        except DegenerateDenominator as exc:
            ratios.append(None)
            flags.append(str(exc))
    finite = [r for r in ratios if r is not None]
    return StabilityResult(ratios, flags, max(finite) if finite else None)


# --------------------------------------------------------------------------
# truths


@dataclass(frozen=True)
class TruthSpec:
    """Named truth ``F0``.

    * ``bump``: ``exp(-1/(1-s^2))``, ``s = (x - centre)/radius``, tensorised in 2D.
    * ``prior_draw``: one fixed draw ``chi * M`` of the unscaled Matern prior.
    * ``sieve``: one fixed draw of the wavelet series prior truncated at ``level``.

    All are scaled to sup-norm ``amplitude``.
    """

    kind: str = "prior_draw"
    amplitude: float = 1.0
    centre: float = 0.5
    radius: float = 0.2
    seed: int = 5
    level: int = 3

    def __post_init__(self):
        if self.kind not in ("bump", "prior_draw", "sieve"):
            raise ValueError(f"unknown truth kind {self.kind!r}")
        if not self.amplitude > 0:
            raise ValueError("amplitude must be positive")

    @property
    def truth_id(self) -> str:
        if self.kind == "bump":
            return f"bump(c={self.centre},r={self.radius},A={self.amplitude})"
        if self.kind == "sieve":
            return f"sieve(J={self.level},seed={self.seed},A={self.amplitude})"
        return f"prior_draw(seed={self.seed},A={self.amplitude})"


def bump_field(grid: Grid, centre=0.5, radius=0.2) -> GridField:
    vals = np.ones(grid.shape)
    for ax in range(grid.d):
        s = (grid.mesh[ax] - centre) / radius
        inside = np.abs(s) < 1.0
        part = np.zeros(grid.shape)
        part[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
        vals = vals * part
    return grid.field(vals)


# --------------------------------------------------------------------------
# plan and report


def _default_n_grid():
    return (256, 512, 1024, 2048, 4096)


@dataclass(frozen=True)
class ExperimentPlan:
    prior: str = MATERN
    alpha: float = 3.0
    beta_reg: float = 2.0
    alpha0: float | None = None
    a: float = 2.0
    d: int = 1
    sigma: float = 0.05
    n_grid: tuple = field(default_factory=_default_n_grid)
    replicates: int = 3
    truth: TruthSpec = field(default_factory=TruthSpec)
    chain: ChainConfig = field(default_factory=ChainConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    grid_n: int = 256
    source: float = 2.0
    plateau: tuple = (0.25, 0.75)
    support: tuple = (0.1, 0.9)
    level: int | None = None
    scale_const: float = 1.0
    k_min: float = 0.1
    nested: bool = True
    master_seed: int = 7
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "n_grid", tuple(int(v) for v in self.n_grid))
        object.__setattr__(self, "plateau", tuple(float(v) for v in self.plateau))
        object.__setattr__(self, "support", tuple(float(v) for v in self.support))
        if self.prior not in VARIANTS:
            raise ValueError(f"unknown prior family {self.prior!r}")
        if not self.n_grid or any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ValueError("N grid must be non-empty and strictly increasing")
        if self.n_grid[0] < 1:
            raise ValueError("N values must be positive")
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.prior == SIEVE and self.level is None:
            raise ValueError("sieve studies need a truncation level")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        # validates alpha against d and the cutoff sets
        self.prior_spec(self.n_grid[0])

    def prior_spec(self, n_obs: int) -> PriorSpec:
        kw = dict(plateau=self.plateau, support=self.support, scale_const=self.scale_const)
        if self.prior == MATERN:
            return PriorSpec.matern(self.alpha, self.d, n_obs=n_obs, **kw)
        if self.prior == SIEVE:
            return PriorSpec.sieve(self.alpha, self.level, self.d, region=self.plateau, **kw)
        return PriorSpec.hierarchical(self.alpha, self.d, region=self.plateau, **kw)

    @property
    def label(self) -> str:
        """Hierarchical studies cannot meet the truth-smoothness hypothesis in practice."""
        if self.prior == HIERARCHICAL:
            return OUTSIDE_HYPOTHESES
        return "within theorem hypotheses"

    def to_dict(self) -> dict:
        out = asdict(self)
        out["n_grid"] = list(self.n_grid)
        out["chain"]["target_band"] = list(self.chain.target_band)
        out["plateau"], out["support"] = list(self.plateau), list(self.support)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentPlan":
        data = dict(data)
        if "truth" in data and isinstance(data["truth"], dict):
            data["truth"] = TruthSpec(**data["truth"])
        if "chain" in data and isinstance(data["chain"], dict):
            ch = dict(data["chain"])
            if "target_band" in ch:
                ch["target_band"] = tuple(ch["target_band"])
            data["chain"] = ChainConfig(**ch)
        if "solver" in data and isinstance(data["solver"], dict):
            data["solver"] = SolverConfig(**data["solver"])
        return cls(**data)


@dataclass
class RateReport:
    plan: dict
    cells: list  # dicts: N, replicate, status, seeds, metrics, diagnostics, error
    medians: dict  # metric -> {N: value or None}
    slopes: dict  # metric -> {"slope", "stderr"} or None
    exponents: dict
    label: str
    truth_id: str
    versions: dict
    elapsed: float = 0.0

    @property
    def complete(self) -> bool:
        return all(c["status"] == "ok" for c in self.cells)

    def median_series(self, metric: str) -> list:
        """``[(N, median), ...]`` in N order."""
        return sorted((int(k), v) for k, v in self.medians[metric].items())

    def to_dict(self) -> dict:
        out = asdict(self)
        out["medians"] = {m: {str(k): v for k, v in s.items()} for m, s in self.medians.items()}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RateReport":
        data = dict(data)
        data["medians"] = {m: {int(k): v for k, v in s.items()} for m, s in data["medians"].items()}
        return cls(**data)


# --------------------------------------------------------------------------
# study execution


def _seed(master: int, *key) -> int:
    return int(np.random.SeedSequence([int(master), *key]).generate_state(1, dtype=np.uint64)[0])


def cell_seeds(plan: ExperimentPlan, N: int, replicate: int) -> dict:
    """Data and chain seeds of one cell, derived from the master seed."""
    # nested studies share both streams across N within a replicate (common random numbers)
    key = (replicate,) if plan.nested else (replicate, N)
    return {"data": _seed(plan.master_seed, 0, *key), "chain": _seed(plan.master_seed, 1, *key)}


@dataclass
class StudyContext:
    """Immutable inputs shared by every cell of a study."""

    plan: ExperimentPlan
    grid: Grid
    link: LinkTable
    source: SourceTerm
    truth: GridField
    u0: GridField
    f0: GridField
    sampler: object | None


def _build_truth(plan: ExperimentPlan, grid: Grid, sampler) -> GridField:
    t = plan.truth
    if t.kind == "bump":
        F = bump_field(grid, t.centre, t.radius)
        lo, hi = t.centre - t.radius, t.centre + t.radius
        if lo < plan.plateau[0] - 1e-12 or hi > plan.plateau[1] + 1e-12:
            raise ValueError("bump truth must be supported in the plateau set K")
    elif t.kind == "prior_draw":
        if sampler is None:
            sampler = build_sampler(grid, plan.alpha, plan.plateau, plan.support)
        F = sampler.draw(np.random.default_rng(t.seed))
    else:
        spec = PriorSpec.sieve(plan.alpha, t.level, plan.d, plateau=plan.plateau,
                               support=plan.support, region=plan.plateau)
        prior = SeriesPrior(spec, grid)
        F = prior.field(prior.draw_state(np.random.default_rng(t.seed), J=t.level))
    return F * (t.amplitude / F.sup())


@lru_cache(maxsize=4)
def _context_cached(plan: ExperimentPlan) -> StudyContext:
    grid = build_grid(d=plan.d, n=plan.grid_n)
    link = build_link(plan.k_min)
    source = SourceTerm.constant(grid, plan.source)
    sampler = None
    if plan.prior == MATERN or plan.truth.kind == "prior_draw":
        sampler = build_sampler(grid, plan.alpha, plan.plateau, plan.support)
    truth = _build_truth(plan, grid, sampler)
    u0 = forward_map(truth, link, source, plan.solver)
    return StudyContext(plan, grid, link, source, truth, u0, apply_link(link, truth), sampler)


def build_context(plan: ExperimentPlan) -> StudyContext:
    return _context_cached(plan)


def _dataset(ctx: StudyContext, N: int, seed: int) -> Dataset:
    plan = ctx.plan
    truth_id = plan.truth.truth_id
    if not plan.nested:
        return generate_dataset(ctx.truth, ctx.link, ctx.source, plan.solver, N, plan.sigma, seed, truth_id)
    # one stream per replicate; smaller N use its prefix (common random numbers)
    full = generate_dataset(ctx.truth, ctx.link, ctx.source, plan.solver, max(plan.n_grid), plan.sigma,
                            seed, truth_id)
    return Dataset(full.X[:N], full.Y[:N], full.sigma, full.seed, truth_id)


def _latent_prior(ctx: StudyContext, N: int):
    spec = ctx.plan.prior_spec(N)
    if spec.variant == MATERN:
        return MaternPrior(spec, ctx.grid, ctx.sampler)
    return SeriesPrior(spec, ctx.grid)


def cell_metrics(ctx: StudyContext, Fbar: GridField) -> dict:
    """All error metrics of a posterior-mean field against the truth."""
    ub = forward_map(Fbar, ctx.link, ctx.source, ctx.plan.solver)
    fb = apply_link(ctx.link, Fbar)
    try:
        ratio = stability_ratio(fb, ctx.f0, ctx.source, ctx.plan.solver, u0=ctx.u0)
    except DegenerateDenominator:
        ratio = float("nan")
    du = ub - ctx.u0
    return {
        "prediction": quadrature_l2(du),
        "parameter": quadrature_l2(fb - ctx.f0),
        "latent": quadrature_l2(Fbar - ctx.truth),
        "h2_prediction": h2_norm(du),
        "hellinger": hellinger_from_solutions(ctx.u0, ub, ctx.plan.sigma),
        "kl": kl_from_solutions(ctx.u0, ub, ctx.plan.sigma),
        "stability_ratio": ratio,
    }


def run_cell(plan: ExperimentPlan, N: int, replicate: int, dump_dir=None) -> dict:
    """Dataset, chain and metrics of one (N, replicate) cell; failures are caught and marked."""
    seeds = cell_seeds(plan, N, replicate)
    cell = {"N": int(N), "replicate": int(replicate), "status": "ok", "seeds": seeds,
            "metrics": {}, "diagnostics": {}, "error": ""}
    try:
        ctx = build_context(plan)
        data = _dataset(ctx, N, seeds["data"])
        prior = _latent_prior(ctx, N)
        loglik = Likelihood(data, ctx.grid, ctx.link, ctx.source, plan.solver)
        record = run_chain(None, prior, loglik, replace(plan.chain, seed=seeds["chain"]))
        Fbar = posterior_mean(record)
        cell["metrics"] = cell_metrics(ctx, Fbar)
        diag = chain_diagnostics(record)
        cell["diagnostics"] = {
            "acceptance": diag["acceptance"],
            "final_beta": diag["final_beta"],
            "iact_l2_norm": diag["iact_l2_norm"],
            "n_stored": diag["n_stored"],
            "solves": loglik.solves,
        }
        if dump_dir is not None:
            out = Path(dump_dir) / f"N{N}_r{replicate}"
            out.mkdir(parents=True, exist_ok=True)
            write_dataset(data, out / "data")
            dump_chain(record, out / "chain")
            write_field_csv(Fbar, out / "posterior_mean.csv")
    except EllipticBayesError as exc:
        log.error("cell N=%d replicate=%d failed: %s", N, replicate, exc)
        cell["status"] = "failed"
        cell["error"] = f"{type(exc).__name__}: {exc}"
    return cell


def _run_cell_args(args):
    return run_cell(*args)


def _aggregate(plan: ExperimentPlan, cells: list) -> tuple:
    medians, slopes = {}, {}
    for m in METRICS:
        per_n = {}
        for N in plan.n_grid:
            vals = [c["metrics"][m] for c in cells if c["N"] == N and c["status"] == "ok"
                    and np.isfinite(c["metrics"][m])]
            per_n[N] = float(np.median(vals)) if vals else None
        medians[m] = per_n
        pairs = [(N, v) for N, v in per_n.items() if v is not None and v > 0]
        if len(plan.n_grid) < 3 or len(pairs) < 3:
            slopes[m] = None
            continue
        s, se = fit_loglog_slope(pairs)
        slopes[m] = {"slope": s, "stderr": se}
    return medians, slopes


def versions() -> dict:
    from . import __version__

    return {
        "elliptic_bayes": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pywavelets": pywt.__version__,
        "python": platform.python_version(),
    }


def run_rate_study(plan: ExperimentPlan, dump_dir=None) -> RateReport:
    """Run every (N, replicate) cell, aggregate medians per N and fit slopes."""
    t0 = time.perf_counter()
    jobs = [(plan, N, r, dump_dir) for N in plan.n_grid for r in range(plan.replicates)]
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            cells = list(pool.map(_run_cell_args, jobs))
    else:
        cells = [_run_cell_args(j) for j in jobs]
    medians, slopes = _aggregate(plan, cells)
    if dump_dir is not None:
        write_field_csv(build_context(plan).truth, Path(dump_dir) / "truth.csv")
    ex = theoretical_exponents(plan.alpha, plan.beta_reg, plan.alpha0, plan.a, plan.d)
    exps = {k: {"value": float(v), "exact": str(v)} for k, v in asdict(ex).items()}
    return RateReport(
        plan=plan.to_dict(),
        cells=cells,
        medians=medians,
        slopes=slopes,
        exponents=exps,
        label=plan.label,
        truth_id=plan.truth.truth_id,
        versions=versions(),
        elapsed=time.perf_counter() - t0,
    )


# --------------------------------------------------------------------------
# report files


def _fmt(v) -> str:
    return "nan" if v is None or not np.isfinite(v) else repr(float(v))


def emit_report(report: RateReport, path) -> dict:
    """Write ``report.json`` and ``rates.csv`` (``N,replicate,metric,value``) under ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for c in sorted(report.cells, key=lambda c: (c["N"], c["replicate"])):
        for m in METRICS:
            rows.append([c["N"], c["replicate"], m, _fmt(c["metrics"].get(m))])
    with open(out / "rates.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["N", "replicate", "metric", "value"])
        w.writerows(rows)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, allow_nan=True) + "\n")
    return {"report": out / "report.json", "rates": out / "rates.csv"}


def load_report(path) -> RateReport:
    p = Path(path)
    if p.is_dir():
        p = p / "report.json"
    return RateReport.from_dict(json.loads(p.read_text()))
