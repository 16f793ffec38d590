"""Regenerate the bundled synthetic data files.

Both files are made up: a merit ladder with the usual convex shape and three
days of intraday trades.  Output is fully determined by the seeds below.

    python3 tools/make_sample_data.py
"""

import csv
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

DATA = Path(__file__).resolve().parents[1] / "src" / "reservegame" / "data"


def ladder(path):
    k = np.arange(30)
    pos = np.round(45.0 + 4.0 * k + 6.0 * np.exp(k / 4.2), 2)
    neg = np.round(20.0 - 5.0 * k - 4.0 * np.exp(k / 4.6), 2)
    with open(path, "w", newline="") as fh:
        fh.write("# synthetic merit-order ladder for demos and tests, not market data\n")
        fh.write("# steps listed outward from zero; prices in EUR/MWh\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sign", "capacity_mw", "marginal_price"])
        for p in pos:
            w.writerow(["+", "70", f"{p:.2f}"])
        for p in neg:
            w.writerow(["-", "70", f"{p:.2f}"])


def intraday(path, seed=20170101):
    rng = np.random.default_rng(seed)
    start = datetime(2017, 1, 1)
    rows = []
    for q in range(3 * 96):
        t0 = start + timedelta(minutes=15 * q)
        hour = t0.hour + t0.minute / 60
        base = 35.0 + 15.0 * np.sin((hour - 8.0) / 24.0 * 2 * np.pi) + rng.normal(0, 4)
        n = int(rng.poisson(10))
        # trading opens a few hours ahead and closes at delivery
        offsets = np.sort(rng.uniform(5, 240, size=n))[::-1]
        price = base
        for off in offsets:
            jump = rng.normal(0, 2.0) + (rng.normal(0, 18.0) if off < 30 else 0.0)
            price = price + jump
            vol = max(1.0, round(float(rng.exponential(70.0)), 1))
            tt = t0 - timedelta(minutes=float(off))
            rows.append([t0.isoformat(), tt.isoformat(timespec="seconds"), f"{price:.2f}", f"{vol:.1f}"])
    bad = [
        ["2017-01-01T00:00:00", "2016-12-31T23:50:00", "n/a", "20.0"],
        ["2017-01-01T00:07:00", "2016-12-31T23:55:00", "31.00", "15.0"],
        ["2017-01-01T00:15:00", "2017-01-01T00:01:00", "33.00", "-4.0"],
    ]
    with open(path, "w", newline="") as fh:
        fh.write("# synthetic intraday trades for demos and tests, not market data\n")
        fh.write("# three deliberately malformed rows are included at the end\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval_start", "trade_time", "price", "volume"])
        w.writerows(rows + bad)


if __name__ == "__main__":
    DATA.mkdir(exist_ok=True)
    ladder(DATA / "synthetic_ladder.csv")
    intraday(DATA / "synthetic_intraday.csv")
