"""TOML configuration: one section per domain type, unknown keys rejected."""
from __future__ import annotations

from pathlib import Path

import tomli

from .errors import ConfigError
from .experiments import ExperimentPlan, TruthSpec
from .forward import SolverConfig
from .grid import DomainSpec, build_grid
from .link import build_link
from .mcmc import ChainConfig
from .priors import PriorSpec

SECTIONS = {
    "grid": {"d", "n"},
    "link": {"k_min", "table_range", "table_step"},
    "solver": {"method", "cg_tol", "cg_maxiter", "oracle_check"},
    "source": {"value"},
    "prior": {"variant", "alpha", "n_obs", "scale_const", "level", "plateau", "support", "region",
              "basis", "moments", "count", "seed"},
    "truth": {"kind", "amplitude", "centre", "radius", "seed", "level"},
    "data": {"N", "sigma", "seed", "path"},
    "chain": {"iterations", "burn_in", "thin", "beta", "target_band", "adapt_window", "beta_min",
              "adapt", "j_move_prob", "seed", "likelihood_off"},
    "study": {"n_grid", "replicates", "beta_reg", "alpha0", "a", "nested", "workers", "master_seed"},
    "theory": {"alpha", "beta_reg", "alpha0", "a", "d"},
    "stability": {"samples", "amplitude", "terms", "seed"},
    "conductivity": {"path", "constant"},
}


def load_config(path) -> dict:
    """Parse a TOML file and check section and key names."""
    p = Path(path)
    try:
        with open(p, "rb") as fh:
            cfg = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    for name, body in cfg.items():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{name}] must be a table")
        extra = set(body) - SECTIONS[name]
        if extra:
            raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
    return cfg


def section(cfg: dict, name: str) -> dict:
    return dict(cfg.get(name, {}))


def _tuples(body: dict, *keys) -> dict:
    for k in keys:
        if k in body:
            body[k] = tuple(body[k])
    return body


def _build(cls, body, name):
    try:
        return cls(**body)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def grid_from(cfg: dict):
    body = section(cfg, "grid")
    spec = _build(DomainSpec, {"d": body.get("d", 1), "n": body.get("n", 256)}, "grid")
    return build_grid(spec)


def link_from(cfg: dict):
    return build_link(**section(cfg, "link"))


def solver_from(cfg: dict) -> SolverConfig:
    return _build(SolverConfig, section(cfg, "solver"), "solver")


def source_value(cfg: dict) -> float:
    return float(section(cfg, "source").get("value", 2.0))


def chain_from(cfg: dict) -> ChainConfig:
    return _build(ChainConfig, _tuples(section(cfg, "chain"), "target_band"), "chain")


def truth_from(cfg: dict) -> TruthSpec:
    return _build(TruthSpec, section(cfg, "truth"), "truth")


def prior_from(cfg: dict, d: int) -> PriorSpec:
    body = _tuples(section(cfg, "prior"), "plateau", "support", "region")
    body.pop("count", None)
    body.pop("seed", None)
    variant = body.pop("variant", "matern")
    alpha = body.pop("alpha", 3.0)
    ctor = {"matern": PriorSpec.matern, "sieve": PriorSpec.sieve, "hierarchical": PriorSpec.hierarchical}
    if variant not in ctor:
        raise ConfigError(f"[prior]: unknown variant {variant!r}")
    try:
        if variant == "matern":
            body.pop("level", None)
            return PriorSpec.matern(alpha, d, n_obs=body.pop("n_obs", 1), **body)
        if variant == "sieve":
            if "level" not in body:
                raise ConfigError("[prior]: sieve prior needs 'level'")
            return PriorSpec.sieve(alpha, body.pop("level"), d, **body)
        body.pop("level", None)
        return PriorSpec.hierarchical(alpha, d, **body)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[prior]: {exc}") from exc


def plan_from(cfg: dict) -> ExperimentPlan:
    prior = section(cfg, "prior")
    grid = section(cfg, "grid")
    study = _tuples(section(cfg, "study"), "n_grid")
    body = {
        "prior": prior.get("variant", "matern"),
        "alpha": prior.get("alpha", 3.0),
        "d": grid.get("d", 1),
        "grid_n": grid.get("n", 256),
        "sigma": section(cfg, "data").get("sigma", 0.05),
        "truth": truth_from(cfg),
        "chain": chain_from(cfg),
        "solver": solver_from(cfg),
        "source": source_value(cfg),
        "k_min": section(cfg, "link").get("k_min", 0.1),
    }
    for key in ("plateau", "support"):
        if key in prior:
            body[key] = tuple(prior[key])
    for key in ("level", "scale_const"):
        if key in prior:
            body[key] = prior[key]
    body.update(study)
    return _build(ExperimentPlan, body, "study")
