"""pCN and reversible-jump sampling of the latent field posterior."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import EllipticBayesError, EmptyChain, SamplerStalled, UnsupportedLevel
from .grid import Grid, GridField, quadrature_l2
from .link import apply_link
from .priors import LatentState, truncation_logpmf

log = logging.getLogger(__name__)

PCN = "pcn"
RJ = "rj"


@dataclass(frozen=True)
class ChainConfig:
    iterations: int = 20000
    burn_in: int = 5000
    thin: int = 10
    beta: float = 0.2
    target_band: tuple = (0.2, 0.4)
    adapt_window: int = 50
    beta_min: float = 1e-4
    adapt: bool = True
    j_move_prob: float = 0.2
    seed: int | None = 0
    likelihood_off: bool = False

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("pCN step must lie in (0, 1]")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        lo, hi = self.target_band
        if not 0.0 < lo < hi < 1.0:
            raise ValueError("target acceptance band must sit inside (0, 1)")
        if not 0.0 <= self.j_move_prob <= 1.0:
            raise ValueError("j_move_prob must be a probability")
        if not 0.0 < self.beta_min <= self.beta:
            raise ValueError("need 0 < beta_min <= beta")

    def expected_stored(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass
class ChainState:
    latent: LatentState
    values: np.ndarray  # flat node values of F
    loglik: float


@dataclass
class ChainRecord:
    grid: Grid
    config: ChainConfig
    states: np.ndarray  # (stored, nodes) latent fields, thinned after burn-in
    stored_iters: np.ndarray
    stored_J: np.ndarray
    accepts: dict  # move -> [accepted, proposed]
    loglik: np.ndarray  # per iteration
    accepted: np.ndarray  # per iteration (bool)
    moves: np.ndarray  # per iteration move label
    J: np.ndarray  # per iteration (-1 when no truncation level)
    beta: np.ndarray  # per iteration
    running_mean: np.ndarray
    final_beta: float
    meta: dict = field(default_factory=dict)

    @property
    def n_stored(self) -> int:
        return int(self.states.shape[0])

    def stored_field(self, k: int) -> GridField:
        return self.grid.field(self.states[k])


def _evaluate(loglik, grid, values) -> float:
    if loglik is None:
        return 0.0
    return loglik(grid.field(values))


def _accept(log_ratio: float, rng) -> bool:
    u = rng.random()
    return u == 0.0 or math.log(u) < log_ratio


def pcn_step(current: ChainState, prior, loglik, beta: float, rng):
    """One preconditioned Crank-Nicolson move in whitened coordinates.

    ``loglik`` maps a latent :class:`GridField` to its log-likelihood, or is
    ``None`` to sample the prior.  Returns ``(state, accepted)``.
    """
    xi = rng.standard_normal(current.latent.z.size)
    z_new = math.sqrt(1.0 - beta * beta) * current.latent.z + beta * xi
    proposal = LatentState(z_new, current.latent.J)
    values = prior.values(proposal)
    try:
        ll = _evaluate(loglik, prior.grid, values)
    except EllipticBayesError as exc:
        log.warning("forward solve failed on pCN proposal, rejecting: %s", exc)
        rng.random()
        return current, False
    if _accept(ll - current.loglik, rng):
        return ChainState(proposal, values, ll), True
    return current, False


def _move_prob(J_from: int, J_to: int) -> float:
    if J_to == J_from + 1:
        return 0.5
    if J_to == J_from - 1 and J_from > 1:
        return 0.5
    return 0.0


def rj_truncation_step(current: ChainState, prior, loglik, rng):
    """Birth/death move on the truncation level J.

    J' = J +/- 1 with probability 1/2 each (a down-move at J = 1 is the
    identity).  Births draw the new level's whitened coefficients from the
    prior, deaths drop the top level, so the coefficient-prior terms cancel
    and the ratio is likelihood x J-law x proposal asymmetry.
    """
    J = current.latent.J
    up = rng.random() < 0.5
    if not up and J == 1:
        return current, True
    J_new = J + 1 if up else J - 1
    try:
        dim_new = prior.dim(J_new)
    except UnsupportedLevel as exc:
        log.info("truncation move rejected: %s", exc)
        return current, False
    z = current.latent.z
    if up:
        z_new = np.concatenate([z, rng.standard_normal(dim_new - z.size)])
    else:
        z_new = z[:dim_new].copy()
    proposal = LatentState(z_new, J_new)
    values = prior.values(proposal)
    try:
        ll = _evaluate(loglik, prior.grid, values)
    except EllipticBayesError as exc:
        log.warning("forward solve failed on truncation proposal, rejecting: %s", exc)
        return current, False
    d = prior.grid.d
    log_ratio = (
        truncation_logpmf(J_new, d)
        - truncation_logpmf(J, d)
        + ll
        - current.loglik
        + math.log(_move_prob(J_new, J))
        - math.log(_move_prob(J, J_new))
    )
    if _accept(log_ratio, rng):
        return ChainState(proposal, values, ll), True
    return current, False


def run_chain(init, prior, loglik, cfg: ChainConfig, rng=None) -> ChainRecord:
    """Run pCN (interleaved with truncation moves for hierarchical priors).

    ``init`` is a :class:`LatentState` or ``None`` for the prior's default
    start.  The pCN step adapts during burn-in only.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    if cfg.likelihood_off:
        loglik = None
    latent = init.copy() if init is not None else prior.initial_state()
    values = prior.values(latent)
    state = ChainState(latent, values, _evaluate(loglik, prior.grid, values))

    T = cfg.iterations
    ll_trace = np.empty(T)
    acc_trace = np.zeros(T, dtype=bool)
    move_trace = np.empty(T, dtype="<U3")
    J_trace = np.full(T, -1, dtype=int)
    beta_trace = np.empty(T)
    n_store = cfg.expected_stored()
    states = np.empty((n_store, prior.grid.size))
    stored_iters = np.empty(n_store, dtype=int)
    stored_J = np.full(n_store, -1, dtype=int)
    mean = np.zeros(prior.grid.size)
    accepts = {PCN: [0, 0]}
    if prior.hierarchical:
        accepts[RJ] = [0, 0]

    beta = cfg.beta
    window_acc = window_n = adapt_count = 0
    k = 0
    for it in range(1, T + 1):
        if prior.hierarchical and rng.random() < cfg.j_move_prob:
            move = RJ
            state, ok = rj_truncation_step(state, prior, loglik, rng)
        else:
            move = PCN
            state, ok = pcn_step(state, prior, loglik, beta, rng)
            if it <= cfg.burn_in and cfg.adapt:
                window_acc += ok
                window_n += 1
                if window_n == cfg.adapt_window:
                    rate = window_acc / window_n
                    if rate == 0 and beta <= cfg.beta_min:
                        raise SamplerStalled(
                            f"no pCN acceptances in {window_n} proposals at beta={beta:.3g}",
                            dump={"iteration": it, "beta": beta, "loglik": state.loglik,
                                  "accepts": accepts},
                        )
                    adapt_count += 1
                    beta = _adapt_beta(beta, rate, adapt_count, cfg)
                    window_acc = window_n = 0
        accepts[move][0] += ok
        accepts[move][1] += 1
        ll_trace[it - 1] = state.loglik
        acc_trace[it - 1] = ok
        move_trace[it - 1] = move
        J_trace[it - 1] = -1 if state.latent.J is None else state.latent.J
        beta_trace[it - 1] = beta
        if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            states[k] = state.values
            stored_iters[k] = it
            if state.latent.J is not None:
                stored_J[k] = state.latent.J
            k += 1
            mean += (state.values - mean) / k

    return ChainRecord(
        grid=prior.grid,
        config=cfg,
        states=states[:k],
        stored_iters=stored_iters[:k],
        stored_J=stored_J[:k],
        accepts=accepts,
        loglik=ll_trace,
        accepted=acc_trace,
        moves=move_trace,
        J=J_trace,
        beta=beta_trace,
        running_mean=mean,
        final_beta=beta,
        meta={"j_move_law": "+/-1 with probability 1/2, reflected at J=1",
              "prior_variant": getattr(prior.spec, "variant", "custom")},
    )


def _adapt_beta(beta, rate, count, cfg: ChainConfig) -> float:
    lo, hi = cfg.target_band
    step = 1.0 / math.sqrt(count)
    if rate < lo:
        beta *= math.exp(-step)
    elif rate > hi:
        beta *= math.exp(step)
    return min(max(beta, cfg.beta_min), 1.0)


def posterior_mean(record: ChainRecord) -> GridField:
    """Arithmetic mean of the stored latent fields."""
    if record.n_stored == 0:
        raise EmptyChain("no stored states")
    return record.grid.field(np.mean(record.states, axis=0))


def conductivity_mean(record: ChainRecord, link) -> GridField:
    """Phi applied to the posterior-mean latent field."""
    return apply_link(link, posterior_mean(record))


def iact(x) -> tuple:
    """Integrated autocorrelation time by Geyer's initial positive sequence.

    Returns ``(tau, degenerate)``; ``tau`` is ``nan`` when the series has zero
    variance.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        return float("nan"), True
    xc = x - x.mean()
    var = float(np.dot(xc, xc) / n)
    if var <= 1e-300 * max(1.0, float(np.max(np.abs(x))) ** 2):
        return float("nan"), True
    m = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(xc, m)
    acov = np.fft.irfft(spec * np.conj(spec), m)[:n] / n
    rho = acov / var
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(max(tau, 1e-12)), False


def chain_diagnostics(record: ChainRecord) -> dict:
    if record.n_stored == 0:
        raise EmptyChain("no stored states")
    rates = {m: (a / p if p else None) for m, (a, p) in record.accepts.items()}
    total_acc = sum(a for a, _ in record.accepts.values())
    total = sum(p for _, p in record.accepts.values())
    post = record.loglik[record.config.burn_in:]
    norms = np.array([quadrature_l2(record.stored_field(k)) for k in range(record.n_stored)])
    tau, degenerate = iact(norms)
    J_hist = {}
    if np.any(record.stored_J >= 0):
        vals, counts = np.unique(record.stored_J, return_counts=True)
        J_hist = {int(v): int(c) for v, c in zip(vals, counts)}
    return {
        "acceptance": rates,
        "acceptance_overall": total_acc / total if total else None,
        "loglik": {
            "mean": float(np.mean(post)),
            "std": float(np.std(post)),
            "min": float(np.min(post)),
            "max": float(np.max(post)),
        },
        "iact_l2_norm": None if degenerate else tau,
        "iact_degenerate": degenerate,
        "J_histogram": J_hist,
        "final_beta": record.final_beta,
        "n_stored": record.n_stored,
    }


def dump_chain(record: ChainRecord, directory) -> dict:
    """Write ``trace.csv``, ``states.csv`` and ``summary.json`` into ``directory``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "loglik", "accepted", "J", "beta"])
        for i in range(record.loglik.size):
            w.writerow([i + 1, repr(float(record.loglik[i])), int(record.accepted[i]),
                        int(record.J[i]), repr(float(record.beta[i]))])
    with open(out / "states.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "J"] + [f"node{i}" for i in range(record.grid.size)])
        for it, J, row in zip(record.stored_iters, record.stored_J, record.states):
            w.writerow([int(it), int(J)] + [repr(float(v)) for v in row])
    summary = chain_diagnostics(record)
    summary["config"] = asdict(record.config)
    summary["grid"] = {"d": record.grid.d, "n": record.grid.n}
    summary["meta"] = record.meta
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=_jsonable) + "\n")
    return {"trace": out / "trace.csv", "states": out / "states.csv", "summary": out / "summary.json"}


def load_states(path) -> tuple:
    """Read ``states.csv`` back as ``(iters, J, states)``."""
    rows = list(csv.reader(open(path, newline="")))[1:]
    iters = np.array([int(r[0]) for r in rows], dtype=int)
    J = np.array([int(r[1]) for r in rows], dtype=int)
    states = np.array([[float(v) for v in r[2:]] for r in rows])
    return iters, J, states


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serialisable: {type(obj)}")
