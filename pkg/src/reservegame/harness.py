"""Parameter sweeps, dataset presets and intraday-data ingestion.

A sweep is the cartesian product of axis values applied to a base config.
Every grid point runs the same derived sample seeds, so neighbouring points
share strategy draws and differences between them are paired comparisons.
Rows come out in grid order whatever the number of workers.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import math
import time
from dataclasses import dataclass, field, fields, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .core import (
    NEVER_GATE, GameConfig, NoiseSpec, WeightSpec, WeightVector, bias_from_equilibrium,
)
from .engine import aggregate, run_many, run_until_converged, sample_configs
from .equilibrium import (
    collapse_normalizer, nash_variance, realistic_spread_estimate, solve_a_star,
)
from .errors import ConfigError, SaturatedEquilibrium
from .prices import (
    Cutoff, Identity, MeritOrder, Quadratic, broadening_expectation, derivative_check,
    eval_price, sample_ladder,
)
from .stats import Histogram, gaussianity, rows_to_csv, running_sigma

log = logging.getLogger(__name__)

DERIVED_AXES = ("alpha", "epsilon", "averse_group")
_SUBSPECS = ("noise", "price", "weights")


# -- sweeps ---------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    """Grid of configs around ``base``.

    Axis names are GameConfig fields, dotted sub-fields such as
    ``noise.sigma_eta`` or ``price.c2``, or the derived axes ``alpha`` (sets
    P = alpha N rounded half up; rows report it as ``alpha_realized``), ``epsilon`` (uniform risk aversion) and
    ``averse_group`` (``none``/``high``/``low``: which half of the weight
    gets ``epsilon``, the other half gets 0).

    With ``rebias`` the strategy bias is recomputed per point from the
    equilibrium arbitrage level.  With ``steps_per_pattern`` the step cap is
    max(min_steps, steps_per_pattern * P).
    """

    base: GameConfig
    axes: tuple[tuple[str, tuple], ...] = ()
    samples_per_point: int = 20
    seed: int = 0
    output: str | None = None
    rebias: bool = False
    steps_per_pattern: int | None = None
    min_steps: int = 50_000
    max_points: int = 10_000

    def __post_init__(self):
        axes = tuple((str(n), tuple(v)) for n, v in self.axes)
        object.__setattr__(self, "axes", axes)
        known = {f.name for f in fields(GameConfig)}
        for name, values in axes:
            head = name.split(".")[0]
            if name not in DERIVED_AXES and head not in known:
                raise ConfigError(f"unknown sweep axis {name!r}")
            if "." in name and head not in _SUBSPECS:
                raise ConfigError(f"axis {name!r}: only {', '.join(_SUBSPECS)} have sub-fields")
            if not values:
                raise ConfigError(f"axis {name!r} has no values")
        if self.samples_per_point < 1:
            raise ConfigError("samples_per_point must be >= 1")

    @property
    def size(self) -> int:
        return math.prod(len(v) for _, v in self.axes)

    def points(self) -> list[dict]:
        names = [n for n, _ in self.axes]
        return [dict(zip(names, combo)) for combo in itertools.product(*(v for _, v in self.axes))]


def split_by_weight(weights) -> tuple[np.ndarray, np.ndarray, float]:
    """Greedy split into a heavy and a light group of about equal total weight.

    Agents are taken in order of decreasing weight (stable for ties) until
    the taken total first reaches W/2.  Returns the index arrays of both
    groups and the heavy group's share of W.
    """
    w = weights.w if isinstance(weights, WeightVector) else np.asarray(weights, dtype=float)
    if w.size < 2:
        raise ConfigError("need at least two agents to split")
    order = np.argsort(-w, kind="stable")
    cum = np.cumsum(w[order])
    W = cum[-1]
    k = int(np.searchsorted(cum, W / 2.0)) + 1
    high = np.sort(order[:k])
    low = np.sort(order[k:])
    return high, low, float(cum[k - 1] / W)


def _set_sub(config: GameConfig, path: str, value) -> GameConfig:
    head, attr = path.split(".", 1)
    sub = getattr(config, head)
    if head == "noise" and attr == "sigma_eta":
        kind = "gaussian" if value > 0 or sub.mean != 0 else "none"
        return config.with_(noise=NoiseSpec(kind, float(value), sub.mean))
    if head == "weights" and attr == "kind":
        return config.with_(weights=WeightSpec(value, mean=sub.mean))
    try:
        return config.with_(**{head: replace(sub, **{attr: value})})
    except TypeError:
        raise ConfigError(f"{type(sub).__name__} has no field {attr!r}") from None


def equilibrium_level(config: GameConfig) -> float:
    """A* of a config, pinned to +-W when saturated."""
    try:
        return solve_a_star(config.price, config.intraday_price, config.noise.mean,
                            n_agents=config.n_agents)
    except SaturatedEquilibrium as exc:
        return exc.a_star


def apply_point(spec: SweepSpec, point: dict) -> GameConfig:
    cfg = spec.base
    if "n_agents" in point:
        cfg = cfg.with_(n_agents=int(point["n_agents"]), risk_aversion=cfg.risk_aversion[0])
    for name, value in point.items():
        if name in DERIVED_AXES or name == "n_agents":
            continue
        if "." in name:
            cfg = _set_sub(cfg, name, value)
        else:
            cfg = cfg.with_(**{name: value})
    if "alpha" in point:
        # round half up; round() would send N odd, alpha 0.5 to the even neighbour
        cfg = cfg.with_(n_patterns=max(1, math.floor(point["alpha"] * cfg.n_agents + 0.5)))
    if "epsilon" in point or "averse_group" in point:
        eps = float(point.get("epsilon", 0.0))
        group = point.get("averse_group")
        if group is None:
            cfg = cfg.with_(risk_aversion=eps)
        else:
            if cfg.weights.sampled:
                raise ConfigError("averse_group needs deterministic weights")
            high, low, _ = split_by_weight(cfg.resolve_weights())
            vec = np.zeros(cfg.n_agents)
            if group == "high":
                vec[high] = eps
            elif group == "low":
                vec[low] = eps
            elif group != "none":
                raise ConfigError(f"averse_group must be none, high or low, got {group!r}")
            cfg = cfg.with_(risk_aversion=tuple(vec))
    if spec.rebias:
        W = cfg.resolve_weights().total
        cfg = cfg.with_(strategy_bias=bias_from_equilibrium(equilibrium_level(cfg), W))
    if spec.steps_per_pattern:
        cfg = cfg.with_(max_steps=max(spec.min_steps, spec.steps_per_pattern * cfg.n_patterns))
    return cfg


def _collapse(result, config: GameConfig, a_star: float) -> float:
    try:
        return result.sigma_A / collapse_normalizer(config.resolve_weights(), a_star)
    except ConfigError:
        return math.nan


def _mean(vals) -> float:
    vals = [v for v in vals if not math.isnan(v)]
    return math.fsum(vals) / len(vals) if vals else math.nan


def sweep(spec: SweepSpec, workers: int = 1) -> list[dict]:
    """Run every grid point as an ensemble; one row per point in grid order.

    Besides the ensemble aggregates each row carries sigma_A / sqrt(N), the
    collapse variable sigma_A / sqrt((W^2 - A*^2) X / N) averaged over
    samples, and the per-sample prediction sqrt(sigma_A^2 + sigma_eta^2).
    """
    n_points = spec.size
    if n_points > spec.max_points:
        raise ConfigError(
            f"sweep has {n_points} grid points x {spec.samples_per_point} samples "
            f"= {n_points * spec.samples_per_point} runs, above the cap of {spec.max_points} points")
    points = spec.points()
    configs = [apply_point(spec, p) for p in points]
    jobs = [sample_configs(c, spec.samples_per_point, spec.seed) for c in configs]
    flat = run_many([j for group in jobs for j in group], workers)
    rows = []
    k = spec.samples_per_point
    for idx, (point, cfg, group) in enumerate(zip(points, configs, jobs)):
        results = flat[idx * k:(idx + 1) * k]
        ens = aggregate(cfg.config_hash, spec.seed, results)
        a_star = equilibrium_level(cfg)
        good = [(r, c) for r, c in zip(results, group) if not r.exhausted]
        row = {name: _axis_cell(point[name]) for name, _ in spec.axes}
        row.update(n_agents=cfg.n_agents, n_patterns=cfg.n_patterns, alpha_realized=cfg.alpha)
        row.update(ens.row())
        row["sigma_A_over_sqrt_N"] = ens.mean["sigma_A"] / math.sqrt(cfg.n_agents)
        row["collapse"] = _mean([_collapse(r, c, a_star) for r, c in good])
        row["predicted_total"] = _mean([math.hypot(r.sigma_A, r.sigma_eta) for r, _ in good])
        row["a_star"] = a_star
        rows.append(row)
    if spec.output:
        Path(spec.output).write_text(rows_to_csv(rows))
    return rows


def _axis_cell(v):
    if isinstance(v, float) and v == NEVER_GATE:
        return "-inf"
    return v


# -- presets --------------------------------------------------------------------

@dataclass
class Panel:
    """One output table of a preset: sweeps whose rows are concatenated, or a row builder."""

    name: str
    sweeps: list[SweepSpec] = field(default_factory=list)
    build: Callable[[], list[dict]] | None = None

    def rows(self, workers: int) -> list[dict]:
        if self.build is not None:
            return self.build()
        out = []
        for s in self.sweeps:
            out.extend(sweep(s, workers))
        return out

    def config_hashes(self) -> list[str]:
        return sorted({apply_point(s, p).config_hash for s in self.sweeps for p in s.points()})


@dataclass(frozen=True)
class PresetInfo:
    description: str
    full_n: int
    desk_scale: float
    builder: Callable


PRESETS: dict[str, PresetInfo] = {}


def _preset(name, description, full_n, desk_scale):
    def deco(fn):
        PRESETS[name] = PresetInfo(description, full_n, desk_scale, fn)
        return fn
    return deco


def scaled_n(full_n: int, scale: float, odd: bool | None = None) -> int:
    """Scale an agent count, keeping odd counts odd."""
    n = max(8, int(round(full_n * scale)))
    if (full_n % 2 if odd is None else odd) and n % 2 == 0:
        n += 1
    return n


ALPHA_GRID = (0.05, 0.1, 0.2, 0.34, 0.5, 1.0, 2.0, 4.0)
LOW_ALPHA = 0.0076


def _standard(n, p=1, **kw) -> GameConfig:
    return GameConfig(n_agents=n, n_patterns=p, **kw)


def _sw(base, axes, ctx, **kw) -> SweepSpec:
    kw.setdefault("steps_per_pattern", ctx["steps_per_pattern"])
    kw.setdefault("min_steps", ctx["min_steps"])
    return SweepSpec(base, tuple(axes), ctx["samples"], ctx["seed"], **kw)


def _series_panels(ctx, with_histograms: bool) -> list[Panel]:
    n = scaled_n(4100, ctx["scale"])
    steps = ctx["series_steps"]
    cfgs = {"high": _standard(n, n // 2, seed=ctx["seed"], max_steps=steps),
            "low": _standard(n, max(1, round(LOW_ALPHA * n)), seed=ctx["seed"], max_steps=steps)}
    cache = {}

    def run(which):
        if which not in cache:
            cache[which] = run_until_converged(cfgs[which], keep_series=True)
        return cache[which]

    def series_rows():
        r = run("high")
        a = r.series["A"]
        stride = max(1, a.size // 20_000)
        return [{"t": int(t), "A": float(a[t])} for t in range(0, a.size, stride)]

    def sigma_rows():
        a = run("high").series["A"]
        window = min(2000, a.size)
        rs = running_sigma(a, window)
        stride = max(1, rs.size // 20_000)
        return [{"t": int(t + window), "sigma_A": float(rs[t]), "sigma_A_over_sqrt_N": float(rs[t] / math.sqrt(n))}
                for t in range(0, rs.size, stride)]

    def hist_rows():
        rows = []
        for which in ("high", "low"):
            r = run(which)
            cfg = cfgs[which]
            a = r.series["A"][r.steps_run - r.steps_run // 2:]
            g = gaussianity(a)
            h = r.hist_A
            mu, sd = h.gaussian_overlay
            for lo, hi, c in zip(h.bin_edges, h.bin_edges[1:], h.counts):
                mid = 0.5 * (lo + hi)
                dens = math.exp(-0.5 * ((mid - mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi)) if sd > 0 else math.nan
                rows.append({"phase": which, "alpha": cfg.alpha, "bin_lo": lo, "bin_hi": hi, "count": c,
                             "gaussian_count": dens * (hi - lo) * h.total,
                             "excess_kurtosis": g.excess_kurtosis, "is_gaussian": g.is_gaussian})
        return rows

    if with_histograms:
        return [Panel("series", build=series_rows), Panel("histogram", build=hist_rows)]
    return [Panel("running_sigma", build=sigma_rows)]


@_preset("fig2", "time series of A and histograms above and below the transition", 4100, 0.125)
def _fig2(ctx):
    return _series_panels(ctx, True)


@_preset("fig3", "running standard deviation of A (window 2000)", 4100, 0.125)
def _fig3(ctx):
    return _series_panels(ctx, False)


@_preset("fig4", "sigma_A/sqrt(N) against alpha for several S, and collapse across N", 1025, 0.5)
def _fig4(ctx):
    n = scaled_n(1025, ctx["scale"])
    s_values = (2, 3, 4, 5) if ctx["full"] else (2, 3, 4)
    grid = ALPHA_GRID + (8.0,)
    a = _sw(_standard(n), [("n_strategies", s_values), ("alpha", grid)], ctx)
    b = _sw(_standard(n), [("n_agents", tuple(scaled_n(m, ctx["scale"], odd=False) for m in (1024, 2048))),
                           ("alpha", grid)], ctx)
    return [Panel("strategies", [a]), Panel("collapse", [b])]


@_preset("fig5", "rescaled fluctuations for several intraday prices, biased strategies", 1025, 0.5)
def _fig5(ctx):
    n = scaled_n(1025, ctx["scale"])
    prices = tuple(f * n for f in (0.0, 0.25, 0.5, 0.75))
    base = _standard(n, price=Identity())
    return [Panel("intraday", [_sw(base, [("intraday_price", prices), ("alpha", ALPHA_GRID)], ctx, rebias=True)])]


@_preset("fig6", "weight-distribution rescaling and noise additivity", 1025, 0.5)
def _fig6(ctx):
    kinds = ("uniform", "exponential", "pareto", "realistic")
    wbase = _standard(120, price=Identity(), weights=WeightSpec("uniform", mean=1.0))
    weights = _sw(wbase, [("weights.kind", kinds), ("alpha", ALPHA_GRID)], ctx)
    n = scaled_n(1025, ctx["scale"])
    noise = _sw(_standard(n, price=Identity()),
                [("noise.sigma_eta", (0.0, 10.0, 50.0, 100.0)), ("alpha", (0.1, 0.34, 1.0, 4.0))], ctx)
    return [Panel("weights", [weights]), Panel("noise", [noise])]


@_preset("fig7", "mean arbitrage against risk aversion", 2000, 0.25)
def _fig7(ctx):
    n = scaled_n(2000, ctx["scale"])
    base = _standard(n, price=Identity(), intraday_price=n / 4)
    eps = (NEVER_GATE, 0.0, 0.5, 1.0, 2.0)
    return [Panel("mean", [_sw(base, [("epsilon", eps), ("alpha", (0.01, 0.05, 0.1, 0.2, 0.5, 1.0))],
                               ctx, rebias=True)])]


@_preset("fig8", "mean arbitrage under quadratic price against noise and curvature", 1025, 1.0)
def _fig8(ctx):
    n = scaled_n(1025, ctx["scale"])
    base = _standard(n, price=Quadratic(1 / 500))
    a = _sw(base, [("alpha", (0.1, 1.0)), ("noise.sigma_eta", (0.0, 25.0, 50.0, 100.0))], ctx)
    b = _sw(base.with_(noise=NoiseSpec("gaussian", 50.0)),
            [("alpha", (0.1, 1.0)), ("price.c2", (1 / 2000, 1 / 1000, 1 / 500, 1 / 250))], ctx)
    return [Panel("noise", [a]), Panel("curvature", [b])]


@_preset("fig9", "fluctuations under risk aversion against alpha and against P", 2000, 0.25)
def _fig9(ctx):
    n = scaled_n(2000, ctx["scale"])
    base = _standard(n, price=Identity(), intraday_price=n / 4)
    a = _sw(base, [("epsilon", (NEVER_GATE, 0.0, 1.0)),
                   ("alpha", (0.01, 0.02, 0.05, 0.1, 0.2, 0.34, 0.5, 1.0, 2.0))], ctx, rebias=True)
    sweeps = []
    for m in (2000, 1000, 500):
        k = scaled_n(m, ctx["scale"])
        sweeps.append(_sw(_standard(k, price=Identity(), intraday_price=k / 4, risk_aversion=1.0),
                          [("n_patterns", (5, 7, 10, 14, 20, 28, 40, 56, 80, 160))], ctx, rebias=True))
    return [Panel("alpha", [a]), Panel("patterns", sweeps)]


@_preset("fig10", "heterogeneous risk aversion by weight group, realistic weights", 120, 1.0)
def _fig10(ctx):
    base = _standard(120, 120, price=Identity(), intraday_price=50.0,
                     weights=WeightSpec("realistic", mean=1.0))
    s = _sw(base, [("epsilon", (0.5, 1.0, 2.0, 5.0)), ("averse_group", ("none", "high", "low"))],
            ctx, rebias=True)
    return [Panel("groups", [s])]


@_preset("appA", "equilibrium estimate for the realistic weight table", 120, 1.0)
def _app_a(ctx):
    def build():
        w = WeightSpec("realistic")
        vec = GameConfig(n_agents=120, n_patterns=1, weights=w).resolve_weights()
        mu = vec.total / math.sqrt(5.0)
        rep = nash_variance(vec, mu)
        return [{"W": rep.W, "X": rep.X, "effective_agents": rep.effective_agents,
                 "mean_A": mu, "sigma_A_pred": rep.sigma_A_pred, "bias_p": rep.bias_p,
                 "sigma_over_mean": rep.sigma_over_mean,
                 "sigma_over_mean_estimate": realistic_spread_estimate()}]
    return [Panel("estimate", build=build)]


@_preset("appB", "slope and curvature of the merit-order average price", 0, 1.0)
def _app_b(ctx):
    def build():
        ladder = sample_ladder()
        spec = MeritOrder(ladder)
        rows = []
        for x in np.linspace(-0.95 * ladder.negative_capacity, 0.95 * ladder.positive_capacity, 39):
            if abs(x) < 60:
                continue
            d = derivative_check(ladder, float(x))
            rows.append({"x": float(x), "R": eval_price(spec, float(x)), "marginal": float(ladder.marginal(x)),
                         "dR": d.dR, "d2R": d.d2R, "smoothed_marginal": d.marginal,
                         "smoothed_slope": d.marginal_slope, "condition": d.convexity_condition_holds})
        return rows
    return [Panel("ladder", build=build)]


@_preset("appC", "expected price under symmetric broadening", 0, 1.0)
def _app_c(ctx):
    def build():
        widths = (25.0, 50.0, 100.0, 200.0)
        cases = [("quadratic_convex", Quadratic(1 / 500), 120.0),
                 ("quadratic_concave", Quadratic(-1 / 2000), 0.0),
                 ("cutoff", Cutoff(MeritOrder(sample_ladder()), 40.0), 40.0)]
        rows = []
        for name, spec, intraday in cases:
            a = solve_a_star(spec, intraday)
            for dist in ("gaussian", "uniform"):
                for w, val in broadening_expectation(spec, a, widths, dist):
                    closed = (eval_price(spec, a) + spec.c2 * w * w) if isinstance(spec, Quadratic) else math.nan
                    rows.append({"case": name, "dist": dist, "intraday": intraday, "a_star": a, "width": w,
                                 "expected_R": val, "closed_form": closed})
        return rows
    return [Panel("broadening", build=build)]


def preset_panels(name: str, scale: float | None = None, seed: int = 0,
                  samples: int | None = None, full: bool = False) -> list[Panel]:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    info = PRESETS[name]
    if scale is None:
        scale = 1.0 if full else info.desk_scale
    if not scale > 0:
        raise ConfigError("scale must be > 0")
    ctx = {"scale": scale, "seed": seed, "full": full,
           "samples": samples if samples is not None else (100 if full else 20),
           "steps_per_pattern": 100, "min_steps": 1_000_000 if full else 50_000,
           "series_steps": 2_000_000 if full else 200_000}
    return info.builder(ctx)


def run_preset(name: str, out_dir, scale: float | None = None, seed: int = 0,
               samples: int | None = None, full: bool = False, workers: int = 1) -> dict:
    """Write one CSV per panel plus ``<name>_manifest.json`` into ``out_dir``.

    The manifest (seed, scale, config hashes, file digests, version) is
    byte-stable; wall-clock time goes to a separate ``<name>_timing.json``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    panels = preset_panels(name, scale, seed, samples, full)
    info = PRESETS[name]
    manifest = {"preset": name, "description": info.description, "version": __version__,
                "scale": scale if scale is not None else (1.0 if full else info.desk_scale),
                "seed": seed, "full": full, "panels": []}
    t0 = time.perf_counter()
    result = {}
    for panel in panels:
        rows = panel.rows(workers)
        text = rows_to_csv(rows)
        fname = f"{name}_{panel.name}.csv"
        (out / fname).write_text(text)
        result[panel.name] = rows
        entry = {"name": panel.name, "file": fname, "rows": len(rows),
                 "sha256": hashlib.sha256(text.encode()).hexdigest()}
        if panel.sweeps:
            entry["samples_per_point"] = panel.sweeps[0].samples_per_point
            entry["config_hashes"] = panel.config_hashes()
        manifest["panels"].append(entry)
    (out / f"{name}_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out / f"{name}_timing.json").write_text(
        json.dumps({"preset": name, "runtime_seconds": round(time.perf_counter() - t0, 3)}) + "\n")
    return result


# -- intraday market data -------------------------------------------------------

INTERVAL = timedelta(minutes=15)
INTRADAY_COLUMNS = ("interval_start", "trade_time", "price", "volume")


@dataclass(frozen=True)
class IntradayRecord:
    interval_start: datetime
    i_avg: float
    closing_price: float
    volume: float
    n_trades: int


@dataclass
class IntradaySummary:
    records: list[IntradayRecord]
    skipped_rows: int
    hist_avg: Histogram
    hist_diff: Histogram
    diffs: np.ndarray
    factor: float
    min_volume: float

    def summary(self) -> dict:
        avg = np.array([r.i_avg for r in self.records])
        return {"intervals": len(self.records), "skipped_rows": self.skipped_rows,
                "opportunities": int(self.diffs.size), "factor": self.factor,
                "min_volume": self.min_volume,
                "mean_i_avg": float(avg.mean()) if avg.size else math.nan,
                "mean_positive_diff": float(self.diffs.mean()) if self.diffs.size else math.nan,
                "max_diff": float(self.diffs.max()) if self.diffs.size else math.nan}


def _empty_hist() -> Histogram:
    return Histogram((0.0, 1.0), (0,))


def ingest_intraday(path, factor: float = 1.25, min_volume: float = 500.0) -> IntradaySummary:
    """Per-interval averages and closing-price arbitrage margins from trade data.

    Columns: interval_start, trade_time (ISO timestamps), price (EUR/MWh),
    volume (MW).  Lines starting with ``#`` are ignored.  The average is
    volume-weighted; the closing price is the price of the latest trade.
    The margin closing - factor * I_avg is kept where it is positive and the
    interval traded more than ``min_volume``.  Rows with unparsable fields,
    negative volume, a start off the 15-minute grid, or a trade after the
    start of delivery are skipped and counted.
    """
    trades: dict[datetime, list[tuple[datetime, float, float]]] = {}
    skipped = 0
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.lstrip().startswith("#"))
        missing = set(INTRADAY_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ConfigError(f"intraday file lacks columns: {', '.join(sorted(missing))}")
        for row in reader:
            try:
                start = datetime.fromisoformat(row["interval_start"].strip())
                tt = datetime.fromisoformat(row["trade_time"].strip())
                price = float(row["price"])
                vol = float(row["volume"])
            except (TypeError, ValueError, AttributeError):
                skipped += 1
                continue
            aligned = start.minute % 15 == 0 and start.second == 0 and start.microsecond == 0
            if not (aligned and vol >= 0 and math.isfinite(price) and tt <= start):
                skipped += 1
                continue
            trades.setdefault(start, []).append((tt, price, vol))
    if skipped:
        log.warning("skipped %d malformed intraday rows", skipped)
    records = []
    for start in sorted(trades):
        rows = trades[start]
        vol = math.fsum(v for _, _, v in rows)
        if vol <= 0:
            continue
        i_avg = math.fsum(p * v for _, p, v in rows) / vol
        closing = max(rows, key=lambda r: r[0])[1]
        records.append(IntradayRecord(start, i_avg, closing, vol, len(rows)))
    diffs = np.array([r.closing_price - factor * r.i_avg for r in records
                      if r.volume > min_volume and r.closing_price - factor * r.i_avg > 0])
    avg = np.array([r.i_avg for r in records])
    return IntradaySummary(
        records, skipped,
        Histogram.of(avg) if avg.size else _empty_hist(),
        Histogram.of(diffs) if diffs.size else _empty_hist(),
        diffs, factor, min_volume,
    )
