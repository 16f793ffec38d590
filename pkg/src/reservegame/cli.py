"""Command-line entry point: ``reservegame <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 no convergence,
4 reserve exhausted.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict
from pathlib import Path

from .core import GameConfig
from .engine import run_ensemble, run_until_converged
from .equilibrium import equilibrium_report, nash_variance
from .errors import ConfigError, ReserveExhausted
from .harness import PRESETS, SweepSpec, ingest_intraday, run_preset, sweep
from .prices import MeritOrder, derivative_check, eval_price, load_ladder_csv, sample_ladder
from .stats import rows_to_csv

EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3
EXIT_EXHAUSTED = 4

log = logging.getLogger("reservegame")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_config(args) -> GameConfig:
    cfg = GameConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.with_(seed=args.seed)
    return cfg


def _result_row(r) -> dict:
    d = r.to_dict()
    for k in ("hist_A", "hist_total"):
        d.pop(k)
    return d


def cmd_run(args) -> int:
    cfg = _load_config(args)
    r = run_until_converged(cfg, trace=args.trace)
    if args.format == "json":
        _emit(r.to_json() + "\n", args.out)
    else:
        _emit(rows_to_csv([_result_row(r)]), args.out)
    if r.exhausted:
        return EXIT_EXHAUSTED
    if not r.converged and not args.allow_unconverged:
        return EXIT_NOT_CONVERGED
    return 0


def cmd_ensemble(args) -> int:
    cfg = _load_config(args)
    ens = run_ensemble(cfg, args.samples, workers=args.workers)
    if args.format == "json":
        _emit(ens.to_json() + "\n", args.out)
    else:
        _emit(rows_to_csv([ens.row()]), args.out)
    if ens.n_exhausted:
        return EXIT_EXHAUSTED
    if ens.n_converged == 0 and not args.allow_unconverged:
        return EXIT_NOT_CONVERGED
    return 0


def _parse_value(text: str):
    t = text.strip()
    if t.lower() in ("-inf", "never"):
        return -math.inf
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    return t


def load_sweep(path, seed: int | None = None) -> SweepSpec:
    """Sweep file: a config file plus ``sweep.*`` keys.

    ``sweep.axis.<name> = v1, v2, ...`` adds an axis (in file order);
    ``sweep.samples``, ``sweep.rebias``, ``sweep.steps_per_pattern``,
    ``sweep.min_steps`` and ``sweep.max_points`` tune the run.
    """
    path = Path(path)
    cfg_lines, axes, opts = [], [], {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line.startswith("sweep."):
            cfg_lines.append(line)
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.startswith("sweep.axis."):
            axes.append((key[len("sweep.axis."):], tuple(_parse_value(v) for v in value.split(","))))
        else:
            opts[key[len("sweep."):]] = value
    base = GameConfig.from_text("\n".join(cfg_lines), base_dir=path.parent)
    kw = {}
    for name in ("samples", "steps_per_pattern", "min_steps", "max_points"):
        if name in opts:
            kw["samples_per_point" if name == "samples" else name] = int(opts.pop(name))
    if "rebias" in opts:
        kw["rebias"] = opts.pop("rebias").lower() in ("1", "true", "yes", "on")
    if opts:
        raise ConfigError(f"unknown sweep options: {', '.join(sorted(opts))}")
    return SweepSpec(base, tuple(axes), seed=base.seed if seed is None else seed, **kw)


def cmd_sweep(args) -> int:
    spec = load_sweep(args.spec, args.seed)
    rows = sweep(spec, args.workers)
    if args.format == "json":
        _emit(json.dumps(rows, indent=1) + "\n", args.out)
    else:
        _emit(rows_to_csv(rows), args.out)
    return EXIT_EXHAUSTED if any(r["exhausted"] for r in rows) else 0


def cmd_preset(args) -> int:
    if args.list or not args.name:
        for name, info in PRESETS.items():
            print(f"{name:8s} {info.description}")
        return 0
    seed = 0 if args.seed is None else args.seed
    out = args.out or "results"
    result = run_preset(args.name, out, scale=args.scale, seed=seed, samples=args.samples,
                        full=args.full, workers=args.workers)
    for panel, rows in result.items():
        log.info("%s: %d rows", panel, len(rows))
    print(Path(out) / f"{args.name}_manifest.json")
    return 0


def cmd_nash(args) -> int:
    cfg = _load_config(args)
    w = cfg.resolve_weights()
    rep = nash_variance(w, args.a_star) if args.a_star is not None else \
        equilibrium_report(cfg.price, cfg.intraday_price, w, cfg.noise.mean)
    d = asdict(rep)
    if args.format == "json":
        _emit(json.dumps(d, sort_keys=True) + "\n", args.out)
    else:
        _emit(rows_to_csv([d]), args.out)
    return 0


def cmd_price_analyze(args) -> int:
    ladder = load_ladder_csv(args.ladder) if args.ladder else sample_ladder()
    spec = MeritOrder(ladder)
    if args.x:
        xs = [float(v) for v in args.x.split(",")]
    else:
        lo, hi = -ladder.negative_capacity, ladder.positive_capacity
        xs = [lo + (hi - lo) * k / (args.points + 1) for k in range(1, args.points + 1)]
    rows = []
    for x in xs:
        row = {"x": x, "R": eval_price(spec, x), "marginal": float(ladder.marginal(x))}
        try:
            d = derivative_check(ladder, x)
            row.update(dR=d.dR, d2R=d.d2R, condition=d.convexity_condition_holds)
        except (ConfigError, ReserveExhausted):
            row.update(dR=None, d2R=None, condition=None)
        rows.append(row)
    if args.format == "json":
        _emit(json.dumps(rows, indent=1) + "\n", args.out)
    else:
        _emit(rows_to_csv(rows, ["x", "R", "marginal", "dR", "d2R", "condition"]), args.out)
    return 0


def cmd_ingest_intraday(args) -> int:
    s = ingest_intraday(args.file, factor=args.factor, min_volume=args.min_volume)
    summary = s.summary()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "intraday_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        (out / "intraday_avg_hist.csv").write_text(s.hist_avg.to_csv())
        (out / "intraday_diff_hist.csv").write_text(s.hist_diff.to_csv())
        rows = [{"interval_start": r.interval_start.isoformat(), "i_avg": r.i_avg,
                 "closing_price": r.closing_price, "volume": r.volume, "n_trades": r.n_trades}
                for r in s.records]
        (out / "intraday_intervals.csv").write_text(rows_to_csv(rows))
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the root seed")
    common.add_argument("--out", help="output file (directory for preset and ingest)")
    common.add_argument("--workers", type=int, default=1, help="worker processes")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="reservegame", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="run one game until convergence")
    r.add_argument("config")
    r.add_argument("--trace", help="write the per-step trace to this CSV file")
    r.add_argument("--allow-unconverged", action="store_true", help="exit 0 at the step cap")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("ensemble", parents=[common], help="independent runs with derived seeds")
    e.add_argument("config")
    e.add_argument("--samples", type=int)
    e.add_argument("--allow-unconverged", action="store_true")
    e.set_defaults(func=cmd_ensemble)

    s = sub.add_parser("sweep", parents=[common], help="grid sweep from a sweep file")
    s.add_argument("spec")
    s.set_defaults(func=cmd_sweep)

    pr = sub.add_parser("preset", parents=[common], help="regenerate a reference dataset")
    pr.add_argument("name", nargs="?")
    pr.add_argument("--list", action="store_true")
    pr.add_argument("--scale", type=float, help="agent-count scale relative to full size")
    pr.add_argument("--samples", type=int)
    pr.add_argument("--full", action="store_true", help="full-size agents, samples and steps")
    pr.set_defaults(func=cmd_preset)

    n = sub.add_parser("nash", parents=[common], help="equilibrium statistics for a config")
    n.add_argument("config")
    n.add_argument("--a-star", type=float, help="use this A* instead of solving for it")
    n.set_defaults(func=cmd_nash)

    price = sub.add_parser("price", help="price-function tools")
    psub = price.add_subparsers(dest="price_command", required=True)
    pa = psub.add_parser("analyze", parents=[common], help="slope and curvature of a merit ladder")
    pa.add_argument("ladder", nargs="?", help="ladder CSV (default: bundled synthetic ladder)")
    pa.add_argument("--x", help="comma-separated imbalances to analyse")
    pa.add_argument("--points", type=int, default=21)
    pa.set_defaults(func=cmd_price_analyze)

    ing = sub.add_parser("ingest", help="market-data ingestion")
    isub = ing.add_subparsers(dest="ingest_command", required=True)
    ii = isub.add_parser("intraday", parents=[common], help="intraday trades to interval statistics")
    ii.add_argument("file")
    ii.add_argument("--factor", type=float, default=1.25)
    ii.add_argument("--min-volume", type=float, default=500.0)
    ii.set_defaults(func=cmd_ingest_intraday)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ReserveExhausted as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_EXHAUSTED
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
