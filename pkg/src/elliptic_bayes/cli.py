"""Command-line entry point: ``elliptic-bayes <command> config.toml [--seed S] [--out DIR]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import config as C
from .errors import EllipticBayesError
from .experiments import (
    build_context,
    emit_report,
    run_rate_study,
    smooth_perturbations,
    stability_diagnostic,
    theoretical_exponents,
)
from .forward import SourceTerm, solve_fd
from .grid import read_field_csv, write_field_csv
from .link import apply_link
from .mcmc import chain_diagnostics, dump_chain, posterior_mean, run_chain
from .observation import Likelihood, generate_dataset, read_dataset, write_dataset
from .priors import build_prior, draw_prior

log = logging.getLogger("elliptic_bayes")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, default=str) + "\n")


def _context(cfg):
    """Grid, link, source and truth as configured."""
    plan = C.plan_from(cfg)
    return build_context(plan), plan


def cmd_solve(cfg, args, out: Path) -> int:
    grid = C.grid_from(cfg)
    cond = C.section(cfg, "conductivity")
    if "path" in cond:
        f = read_field_csv(cond["path"])
    elif "constant" in cond:
        f = grid.constant(float(cond["constant"]))
    else:
        ctx, _ = _context(cfg)
        f = ctx.f0
    u = solve_fd(f, f.grid.constant(C.source_value(cfg)), C.solver_from(cfg))
    write_field_csv(f, out / "conductivity.csv")
    write_field_csv(u, out / "solution.csv")
    return 0


def cmd_link_build(cfg, args, out: Path) -> int:
    link = C.link_from(cfg)
    link.to_csv(out / "link.csv")
    _write_json(out / "link.json", {"k_min": link.k_min, "conv_at_zero": link.conv_at_zero,
                                    "t_lo": link.t_lo, "t_hi": link.t_hi, "step": link.step})
    return 0


def cmd_prior_sample(cfg, args, out: Path) -> int:
    grid = C.grid_from(cfg)
    spec = C.prior_from(cfg, grid.d)
    body = C.section(cfg, "prior")
    seed = args.seed if args.seed is not None else body.get("seed", 0)
    rng = np.random.default_rng(seed)
    prior = build_prior(spec, grid)
    meta = []
    for k in range(int(body.get("count", 1))):
        F, coeffs = draw_prior(spec, prior, rng)
        write_field_csv(F, out / f"sample_{k}.csv")
        entry = {"sample": k}
        if coeffs is not None:
            entry["level"] = coeffs.level
            entry["coefficients"] = {str(l): v.tolist() for l, v in coeffs.values.items()}
        meta.append(entry)
    _write_json(out / "samples.json", {"seed": seed, "variant": spec.variant, "samples": meta})
    return 0


def cmd_simulate(cfg, args, out: Path) -> int:
    ctx, plan = _context(cfg)
    body = C.section(cfg, "data")
    seed = args.seed if args.seed is not None else body.get("seed", 0)
    data = generate_dataset(ctx.truth, ctx.link, ctx.source, plan.solver, int(body.get("N", 1024)),
                            float(body.get("sigma", 0.05)), seed, plan.truth.truth_id)
    write_dataset(data, out / "data")
    write_field_csv(ctx.truth, out / "truth.csv")
    write_field_csv(ctx.u0, out / "truth_solution.csv")
    return 0


def cmd_chain(cfg, args, out: Path) -> int:
    ctx, plan = _context(cfg)
    body = C.section(cfg, "data")
    if "path" in body:
        data = read_dataset(body["path"])
    else:
        data = generate_dataset(ctx.truth, ctx.link, ctx.source, plan.solver, int(body.get("N", 1024)),
                                float(body.get("sigma", 0.05)), body.get("seed", 0), plan.truth.truth_id)
    spec = C.prior_from(cfg, ctx.grid.d)
    if spec.variant == "matern":
        spec = spec.with_scaling(data.N)
    prior = build_prior(spec, ctx.grid)
    chain_cfg = C.chain_from(cfg)
    if args.seed is not None:
        chain_cfg = replace(chain_cfg, seed=args.seed)
    loglik = Likelihood(data, ctx.grid, ctx.link, ctx.source, plan.solver)
    record = run_chain(None, prior, loglik, chain_cfg)
    dump_chain(record, out / "chain")
    Fbar = posterior_mean(record)
    write_field_csv(Fbar, out / "posterior_mean.csv")
    write_field_csv(apply_link(ctx.link, Fbar), out / "conductivity_mean.csv")
    _write_json(out / "diagnostics.json", chain_diagnostics(record))
    return 0


def cmd_rate_study(cfg, args, out: Path) -> int:
    plan = C.plan_from(cfg)
    if args.seed is not None:
        plan = replace(plan, master_seed=args.seed)
    report = run_rate_study(plan, dump_dir=out / "cells" if args.dump else None)
    emit_report(report, out)
    failed = [c for c in report.cells if c["status"] != "ok"]
    for c in failed:
        log.error("cell N=%d replicate=%d failed: %s", c["N"], c["replicate"], c["error"])
    return 0 if not failed else 1


def cmd_theory(cfg, args, out: Path) -> int:
    body = C.section(cfg, "theory")
    ex = theoretical_exponents(body.get("alpha", 3), body.get("beta_reg", 2), body.get("alpha0"),
                               body.get("a", 2), body.get("d", 1))
    record = {k: {"value": float(v), "exact": str(v)} for k, v in asdict(ex).items()}
    _write_json(out / "exponents.json", record)
    print(json.dumps(record, indent=2))
    return 0


def cmd_stability(cfg, args, out: Path) -> int:
    grid = C.grid_from(cfg)
    body = C.section(cfg, "stability")
    seed = args.seed if args.seed is not None else body.get("seed", 0)
    rng = np.random.default_rng(seed)
    f0 = grid.constant(1.0)
    fs = smooth_perturbations(f0, int(body.get("samples", 50)), float(body.get("amplitude", 0.1)), rng,
                              int(body.get("terms", 3)))
    res = stability_diagnostic(fs, f0, SourceTerm.constant(grid, C.source_value(cfg)), C.solver_from(cfg))
    _write_json(out / "stability.json", {"seed": seed, "ratios": res.ratios, "flags": res.flags,
                                         "max_ratio": res.max_ratio})
    return 0


COMMANDS = {
    "solve": cmd_solve,
    "link-build": cmd_link_build,
    "prior-sample": cmd_prior_sample,
    "simulate": cmd_simulate,
    "chain": cmd_chain,
    "rate-study": cmd_rate_study,
    "theory": cmd_theory,
    "stability": cmd_stability,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elliptic-bayes", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", type=Path, help="TOML configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the command's seed")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        if name == "rate-study":
            p.add_argument("--dump", action="store_true", help="write per-cell datasets and chains")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = C.load_config(args.config)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args, args.out)
    except (EllipticBayesError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
