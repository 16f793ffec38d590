"""Repeated minority-game dynamics for reserve-power arbitrage.

One step, in order:

1. draw the signal mu uniformly from 1..P;
2. gate each agent: active iff max_s U_s / t >= eps_i (everyone is active at t = 0);
3. active agents play their best strategy's decision for mu (ties broken
   uniformly at random), gated agents play 0;
4. A = sum_i w_i a_i, then draw the external noise eta;
5. price = R(A + eta);
6. every strategy of every agent gains s(mu) * (I - price);
7. t += 1.

The inner loop is a numba kernel.  Signal and noise draws are made in
vectorised chunks from their own streams; splitting a run into different
chunk sizes yields the same sequence.  Tie-breaking draws come from a
separate stream, one uniform per extra tied candidate (reservoir sampling),
consumed in agent order.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np

from .core import (
    STREAM_NOISE, STREAM_SAMPLES, STREAM_SIGNAL, STREAM_TIES, GameConfig,
    StrategyTable, WeightVector, derive_seed, draw_strategies, make_stream,
)
from .errors import ConfigError, ReserveExhausted
from .prices import compile_price, price_args, price_scalar
from .stats import Histogram, Moments

log = logging.getLogger(__name__)

CHECK_BASE = 1000


@numba.njit(cache=True)
def _advance(strat, w, U, gated, eps, mus, etas, t0, intraday,
             kind, params, pe, pp, pc, ne, npr, nc, zero_price, cut_on, cut_level,
             mono_lo, mono_hi, eval_uses_noise, freeze_inactive, tie_rng,
             out_a, out_active, out_price, actions):
    n_agents, n_strat = U.shape
    n_flat = n_agents * n_strat
    u_flat = U.reshape(n_flat)
    outside = 0
    for k in range(mus.shape[0]):
        mu = mus[k]
        t = t0 + k
        a_tot = 0.0
        n_active = 0
        for i in range(n_agents):
            if n_strat == 2:
                # branch-free fast path; ties are rare after the first steps
                u0 = U[i, 0]
                u1 = U[i, 1]
                best = 1 if u1 > u0 else 0
                best_u = max(u0, u1)
                if u0 == u1 and tie_rng.random() * 2.0 < 1.0:
                    best = 1
            else:
                best = 0
                best_u = U[i, 0]
                ties = 1
                for s in range(1, n_strat):
                    u = U[i, s]
                    if u > best_u:
                        best = s
                        best_u = u
                        ties = 1
                    elif u == best_u:
                        ties += 1
                        if tie_rng.random() * ties < 1.0:
                            best = s
            active = True
            if t > 0 and gated[i]:
                active = best_u / t >= eps[i]
            if active:
                a = strat[mu, i, best]
                actions[i] = a
                a_tot += w[i] * a
                n_active += 1
            else:
                actions[i] = 0
        x = a_tot + etas[k]
        price, over = price_scalar(x, kind, params, pe, pp, pc, ne, npr, nc,
                                   zero_price, cut_on, cut_level)
        if over > 0.0:
            return k, over, outside, x
        if x < mono_lo or x > mono_hi:
            outside += 1
        if eval_uses_noise:
            pay = intraday - price
        else:
            r_a, over = price_scalar(a_tot, kind, params, pe, pp, pc, ne, npr, nc,
                                     zero_price, cut_on, cut_level)
            if over > 0.0:
                return k, over, outside, a_tot
            pay = intraday - r_a
        row = strat[mu].reshape(n_flat)
        if freeze_inactive:
            for i in range(n_agents):
                if actions[i] != 0:
                    for s in range(n_strat):
                        U[i, s] += strat[mu, i, s] * pay
        else:
            for j in range(n_flat):
                u_flat[j] += row[j] * pay
        out_a[k] = a_tot
        out_active[k] = n_active
        out_price[k] = price
    return mus.shape[0], 0.0, outside, 0.0


@dataclass
class EngineState:
    """Mutable learning state: evaluations U (N x S), step counter and streams."""

    U: np.ndarray
    t: int
    signal_rng: np.random.Generator
    noise_rng: np.random.Generator
    tie_rng: np.random.Generator
    active_mask: np.ndarray

    @classmethod
    def fresh(cls, config: GameConfig) -> "EngineState":
        return cls(
            U=np.zeros((config.n_agents, config.n_strategies)),
            t=0,
            signal_rng=make_stream(config.seed, STREAM_SIGNAL),
            noise_rng=make_stream(config.seed, STREAM_NOISE),
            tie_rng=make_stream(config.seed, STREAM_TIES),
            active_mask=np.ones(config.n_agents, dtype=bool),
        )


@dataclass(frozen=True)
class StepRecord:
    t: int
    mu: int  # 1..P
    actions: np.ndarray
    A: float
    eta: float
    total_imbalance: float
    price: float
    eval_payoff: float  # I - price used in the evaluation update
    payoff_per_unit: np.ndarray


@dataclass
class Chunk:
    mu: np.ndarray  # 1..P
    A: np.ndarray
    eta: np.ndarray
    price: np.ndarray
    active: np.ndarray
    outside_monotone: int = 0
    exhausted: ReserveExhausted | None = None


class Game:
    """One game instance: resolved weights, drawn strategies and learning state."""

    def __init__(self, config: GameConfig, strategies: StrategyTable | None = None,
                 weights: WeightVector | None = None):
        self.config = config
        self.weights = weights if weights is not None else config.resolve_weights()
        if self.weights.n != config.n_agents:
            raise ConfigError("weight vector length differs from n_agents")
        if strategies is None:
            strategies = draw_strategies(config.n_agents, config.n_strategies,
                                         config.n_patterns, config.strategy_bias, config.seed)
        if strategies.shape != (config.n_agents, config.n_strategies, config.n_patterns):
            raise ConfigError(f"strategy table shape {strategies.shape} does not match config")
        self.strategies = strategies
        self.state = EngineState.fresh(config)
        self._strat = strategies.by_signal()
        self._w = np.ascontiguousarray(self.weights.w, dtype=float)
        self._gated = config.gated
        self._eps = np.array(config.risk_aversion, dtype=float)
        self._price = compile_price(config.price, config.n_agents)
        self._actions = np.zeros(config.n_agents, dtype=np.int8)

    def _draw(self, n: int):
        st, cfg = self.state, self.config
        mus = st.signal_rng.integers(0, cfg.n_patterns, size=n, dtype=np.int64)
        if cfg.noise.active:
            etas = st.noise_rng.normal(cfg.noise.mean, cfg.noise.sigma_eta, size=n)
        else:
            etas = np.zeros(n)
        return mus, etas

    def advance(self, n: int) -> Chunk:
        """Run up to ``n`` steps; stops early on reserve exhaustion."""
        cfg, st = self.config, self.state
        mus, etas = self._draw(n)
        out_a = np.empty(n)
        out_active = np.empty(n, dtype=np.int32)
        out_price = np.empty(n)
        cp = self._price
        done, over, outside, x = _advance(
            self._strat, self._w, st.U, self._gated, self._eps, mus, etas, st.t,
            float(cfg.intraday_price), *price_args(cp), cp.mono_lo, cp.mono_hi,
            cfg.eval_uses_noise, cfg.freeze_inactive, st.tie_rng,
            out_a, out_active, out_price, self._actions,
        )
        st.t += done
        st.active_mask = self._actions != 0
        exhausted = ReserveExhausted(x, abs(x) - over) if over > 0 else None
        return Chunk(mus[:done] + 1, out_a[:done], etas[:done], out_price[:done],
                     out_active[:done], outside, exhausted)

    def step(self) -> StepRecord:
        t = self.state.t
        chunk = self.advance(1)
        if chunk.exhausted is not None:
            raise chunk.exhausted
        cfg = self.config
        price = float(chunk.price[0])
        a = float(chunk.A[0])
        if cfg.eval_uses_noise:
            pay = cfg.intraday_price - price
        else:
            pay = cfg.intraday_price - price_scalar(a, *price_args(self._price))[0]
        actions = self._actions.copy()
        return StepRecord(
            t=t, mu=int(chunk.mu[0]), actions=actions, A=a, eta=float(chunk.eta[0]),
            total_imbalance=a + float(chunk.eta[0]), price=price, eval_payoff=pay,
            payoff_per_unit=actions * (cfg.intraday_price - price),
        )


def step(game: Game) -> StepRecord:
    return game.step()


# -- converged runs -------------------------------------------------------------

@dataclass
class RunResult:
    mean_A: float
    sigma_A: float
    mean_total: float
    sigma_total: float
    sigma_eta: float
    excess_kurtosis: float
    mean_active_fraction: float
    hist_A: Histogram
    hist_total: Histogram
    steps_run: int
    converged: bool
    last_relative_change: float
    exhausted: bool
    overshoot: float
    outside_monotone_steps: int
    config_hash: str
    seed: int
    series: dict | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("series")
        d["hist_A"] = self.hist_A.to_dict()
        d["hist_total"] = self.hist_total.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _sigma(x) -> float:
    return float(np.std(x)) if len(x) else math.nan


def run_until_converged(config: GameConfig, keep_series: bool = False, trace=None,
                        strategies: StrategyTable | None = None) -> RunResult:
    """Run with doubling checkpoints until sigma_A settles or ``max_steps``.

    At each checkpoint t = 1000 * 2**k the standard deviation of A over the
    third and the last quarter of steps are compared; the run stops when
    their relative difference is below ``convergence_tol``.  Statistics use
    the last half of all steps.  A reserve exhaustion ends the run early.
    """
    game = Game(config, strategies=strategies)
    cap = min(config.max_steps, CHECK_BASE)
    a_buf = np.empty(cap)
    e_buf = np.empty(cap)
    act_buf = np.empty(cap, dtype=np.int32)
    t = 0
    checkpoint = CHECK_BASE
    converged = False
    rel = math.nan
    outside = 0
    exhausted = None
    writer = None
    fh = None
    if trace is not None:
        fh = open(trace, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["t", "mu", "A", "eta", "price", "active_count"])
    try:
        while True:
            target = min(checkpoint, config.max_steps)
            if target > a_buf.size:
                grow = target - a_buf.size
                a_buf = np.concatenate([a_buf, np.empty(grow)])
                e_buf = np.concatenate([e_buf, np.empty(grow)])
                act_buf = np.concatenate([act_buf, np.empty(grow, dtype=np.int32)])
            chunk = game.advance(target - t)
            n = chunk.A.size
            a_buf[t:t + n] = chunk.A
            e_buf[t:t + n] = chunk.eta
            act_buf[t:t + n] = chunk.active
            outside += chunk.outside_monotone
            if writer is not None:
                for k in range(n):
                    writer.writerow([t + k, int(chunk.mu[k]), repr(float(chunk.A[k])),
                                     repr(float(chunk.eta[k])), repr(float(chunk.price[k])),
                                     int(chunk.active[k])])
            t += n
            if chunk.exhausted is not None:
                exhausted = chunk.exhausted
                log.warning("run seed=%d: %s at t=%d", config.seed, exhausted, t)
                break
            half, q3 = t // 2, (3 * t) // 4
            s_third, s_last = _sigma(a_buf[half:q3]), _sigma(a_buf[q3:t])
            if s_last == 0.0:
                rel = 0.0 if s_third == 0.0 else math.inf
            else:
                rel = abs(s_last - s_third) / s_last
            if rel < config.convergence_tol:
                converged = True
                break
            if t >= config.max_steps:
                break
            checkpoint *= 2
    finally:
        if fh is not None:
            fh.close()
    if outside:
        log.warning("run seed=%d: %d steps left the monotone region of the price", config.seed, outside)

    start = t - t // 2
    a = a_buf[start:t]
    e = e_buf[start:t]
    tot = a + e
    ma = Moments.of(a)
    return RunResult(
        mean_A=ma.mean if ma.count else math.nan,
        sigma_A=ma.std if ma.count else math.nan,
        mean_total=float(tot.mean()) if tot.size else math.nan,
        sigma_total=_sigma(tot),
        sigma_eta=_sigma(e),
        excess_kurtosis=ma.excess_kurtosis if ma.count else math.nan,
        mean_active_fraction=float(act_buf[start:t].mean()) / config.n_agents if t else math.nan,
        hist_A=Histogram.of(a) if a.size else Histogram((0.0, 1.0), (0,)),
        hist_total=Histogram.of(tot) if tot.size else Histogram((0.0, 1.0), (0,)),
        steps_run=t,
        converged=converged,
        last_relative_change=rel,
        exhausted=exhausted is not None,
        overshoot=exhausted.overshoot if exhausted is not None else 0.0,
        outside_monotone_steps=outside,
        config_hash=config.config_hash,
        seed=config.seed,
        series={"A": a_buf[:t].copy(), "eta": e_buf[:t].copy()} if keep_series else None,
    )


# -- ensembles ------------------------------------------------------------------

AGGREGATED = ("mean_A", "sigma_A", "sigma_total", "excess_kurtosis", "mean_active_fraction")


@dataclass
class EnsembleResult:
    config_hash: str
    seed_base: int
    sample_count: int
    n_converged: int
    n_exhausted: int
    mean: dict
    stderr: dict
    samples: list = field(repr=False, default_factory=list)

    def row(self) -> dict:
        r = {"config_hash": self.config_hash, "seed_base": self.seed_base,
             "samples": self.sample_count, "converged": self.n_converged,
             "exhausted": self.n_exhausted}
        for k in AGGREGATED:
            r[k] = self.mean[k]
            r[k + "_se"] = self.stderr[k]
        return r

    def to_json(self) -> str:
        d = self.row()
        d["sample_seeds"] = [s.seed for s in self.samples]
        return json.dumps(d, sort_keys=True)


def sample_configs(config: GameConfig, sample_count: int, seed_base: int) -> list[GameConfig]:
    return [config.with_(seed=derive_seed(seed_base, STREAM_SAMPLES, k)) for k in range(sample_count)]


def aggregate(config_hash: str, seed_base: int, results: list[RunResult]) -> EnsembleResult:
    """Mean and standard error per statistic over non-exhausted samples.

    ``math.fsum`` is exactly rounded, so the aggregate does not depend on
    sample order.
    """
    good = [r for r in results if not r.exhausted]
    mean, se = {}, {}
    for k in AGGREGATED:
        vals = [getattr(r, k) for r in good]
        n = len(vals)
        m = math.fsum(vals) / n if n else math.nan
        mean[k] = m
        if n > 1:
            se[k] = math.sqrt(math.fsum((v - m) ** 2 for v in vals) / (n - 1) / n)
        else:
            se[k] = 0.0 if n == 1 else math.nan
    return EnsembleResult(config_hash, seed_base, len(results),
                          sum(r.converged for r in results), len(results) - len(good),
                          mean, se, results)


def _run_quiet(config: GameConfig) -> RunResult:
    return run_until_converged(config)


def run_many(configs: list[GameConfig], workers: int = 1) -> list[RunResult]:
    """Run independent configs, results in input order regardless of ``workers``."""
    if workers <= 1 or len(configs) <= 1:
        return [run_until_converged(c) for c in configs]
    ctx = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        return list(pool.map(_run_quiet, configs))


def run_ensemble(config: GameConfig, sample_count: int | None = None,
                 seed_base: int | None = None, workers: int = 1) -> EnsembleResult:
    """Independent runs with derived seeds (fresh strategies and weights each)."""
    n = config.sample_count if sample_count is None else sample_count
    if n < 1:
        raise ConfigError("sample_count must be >= 1")
    base = config.seed if seed_base is None else seed_base
    results = run_many(sample_configs(config, n, base), workers)
    return aggregate(config.config_hash, base, results)
