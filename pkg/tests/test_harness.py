import json
import math
from pathlib import Path

import numpy as np
import pytest

from reservegame import NEVER_GATE, ConfigError, GameConfig, WeightSpec
from reservegame.core import REALISTIC_WEIGHTS
from reservegame.engine import run_ensemble
from reservegame.harness import (
    PRESETS, SweepSpec, apply_point, ingest_intraday, preset_panels, run_preset, scaled_n,
    split_by_weight, sweep,
)
from reservegame.prices import Identity, Quadratic

DATA = Path(__file__).resolve().parents[1] / "src" / "reservegame" / "data"


def small(**kw):
    kw.setdefault("max_steps", 2000)
    return GameConfig(n_agents=kw.pop("n_agents", 21), n_patterns=kw.pop("n_patterns", 5), **kw)


def test_split_uniform_even():
    high, low, share = split_by_weight(np.ones(10))
    assert len(high) == len(low) == 5 and share == 0.5


def test_split_realistic_table():
    w = np.array(REALISTIC_WEIGHTS, dtype=float)
    high, low, share = split_by_weight(w)
    # 5 x 400 + 5 x 160 = 2800 is the first prefix reaching 2750
    assert sorted(w[high]) == [160.0] * 5 + [400.0] * 5
    assert share == pytest.approx(2800 / 5500)


def test_split_dominant_agent():
    high, low, share = split_by_weight(np.array([1.0, 10.0, 2.0]))
    assert high.tolist() == [1] and low.tolist() == [0, 2]


@pytest.mark.parametrize("seed", range(10))
def test_split_share_bounds(seed):
    w = np.random.default_rng(seed).pareto(2.0, size=50) + 0.1
    high, low, share = split_by_weight(w)
    assert 0.5 <= share <= 0.5 + w.max() / w.sum() + 1e-12
    assert sorted(np.concatenate([high, low]).tolist()) == list(range(50))


def test_sweep_axis_validation():
    with pytest.raises(ConfigError):
        SweepSpec(small(), (("bogus", (1,)),))
    with pytest.raises(ConfigError):
        SweepSpec(small(), (("seed.x", (1,)),))
    with pytest.raises(ConfigError):
        SweepSpec(small(), (("alpha", ()),))


def test_sweep_point_cap():
    spec = SweepSpec(small(), (("alpha", (1, 2, 3)), ("epsilon", (0, 1))), samples_per_point=1, max_points=5)
    with pytest.raises(ConfigError, match="6 grid points"):
        sweep(spec)


def test_sweep_row_count_and_order():
    spec = SweepSpec(small(), (("alpha", (0.5, 1.0, 2.0)), ("epsilon", (NEVER_GATE, 0.0))), samples_per_point=2)
    rows = sweep(spec)
    assert len(rows) == 6
    assert [(r["alpha"], r["epsilon"]) for r in rows][:3] == [(0.5, "-inf"), (0.5, 0.0), (1.0, "-inf")]
    assert rows[0]["n_patterns"] == 11 and rows[0]["alpha_realized"] == 11 / 21


def test_single_point_sweep_equals_ensemble():
    base = small(seed=3)
    rows = sweep(SweepSpec(base, (), samples_per_point=3, seed=3))
    ens = run_ensemble(base, 3)
    assert len(rows) == 1
    for k, v in ens.row().items():
        assert rows[0][k] == v


def test_sweep_workers_identical(tmp_path):
    spec = SweepSpec(small(), (("alpha", (0.5, 2.0)),), samples_per_point=2,
                     output=str(tmp_path / "a.csv"))
    sweep(spec, workers=1)
    spec2 = SweepSpec(small(), (("alpha", (0.5, 2.0)),), samples_per_point=2,
                      output=str(tmp_path / "b.csv"))
    sweep(spec2, workers=2)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_apply_point_derived_axes():
    base = GameConfig(n_agents=120, n_patterns=10, price=Identity(), intraday_price=50.0,
                      weights=WeightSpec("realistic", mean=1.0))
    spec = SweepSpec(base, rebias=True, steps_per_pattern=1000, min_steps=5000)
    cfg = apply_point(spec, {"alpha": 1.0, "epsilon": 2.0, "averse_group": "high"})
    assert cfg.n_patterns == 120 and cfg.max_steps == 120_000
    eps = np.array(cfg.risk_aversion)
    assert (eps == 2.0).sum() == 10 and (eps == 0.0).sum() == 110
    assert cfg.strategy_bias == pytest.approx(0.5 + 50 / 240)
    cfg = apply_point(spec, {"noise.sigma_eta": 5.0})
    assert cfg.noise.kind == "gaussian"
    with pytest.raises(ConfigError):
        apply_point(spec, {"price.c2": 0.1})  # Identity has no c2, reported on use


def test_apply_point_quadratic_curvature():
    spec = SweepSpec(small(price=Quadratic(0.01)))
    assert apply_point(spec, {"price.c2": 0.5}).price == Quadratic(0.5)


def test_scaled_n():
    assert scaled_n(1025, 0.5) == 513
    assert scaled_n(1024, 0.5) == 512
    assert scaled_n(2000, 0.25) == 500 and scaled_n(2000, 0.25, odd=True) == 501
    assert scaled_n(10, 0.01) == 8


def test_unknown_preset():
    with pytest.raises(ConfigError, match="fig4"):
        preset_panels("fig99")


def test_every_preset_builds():
    assert set(PRESETS) == {"fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9", "fig10",
                            "appA", "appB", "appC"}
    for name in PRESETS:
        assert preset_panels(name, samples=1)


@pytest.mark.parametrize("name", ["appA", "appB", "appC"])
def test_analytic_presets_deterministic(tmp_path, name):
    run_preset(name, tmp_path / "a", workers=1)
    run_preset(name, tmp_path / "b", workers=2)
    for f in sorted((tmp_path / "a").iterdir()):
        if "timing" not in f.name:
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_app_a_values(tmp_path):
    rows = run_preset("appA", tmp_path)["estimate"]
    assert rows[0]["W"] == 5500.0
    assert rows[0]["effective_agents"] == pytest.approx(27.64, abs=0.01)
    assert rows[0]["sigma_over_mean"] == pytest.approx(0.38, abs=0.01)
    manifest = json.loads((tmp_path / "appA_manifest.json").read_text())
    assert manifest["panels"][0]["file"] == "appA_estimate.csv"
    assert "runtime_seconds" not in json.dumps(manifest)


def write(tmp_path, text):
    p = tmp_path / "trades.csv"
    p.write_text("interval_start,trade_time,price,volume\n" + text)
    return p


def test_intraday_single_trade(tmp_path):
    s = ingest_intraday(write(tmp_path, "2017-01-01T00:15:00,2017-01-01T00:00:00,40.0,900\n"))
    r = s.records[0]
    assert r.i_avg == r.closing_price == 40.0
    assert s.diffs.size == 0  # margin -0.25 * 40 is filtered out


def test_intraday_weighted_average(tmp_path):
    s = ingest_intraday(write(tmp_path, "2017-01-01T00:15:00,2017-01-01T00:00:00,10,1\n"
                                        "2017-01-01T00:15:00,2017-01-01T00:05:00,20,3\n"))
    assert s.records[0].i_avg == 17.5 and s.records[0].closing_price == 20.0


def test_intraday_margin_filter(tmp_path):
    text = ("2017-01-01T00:15:00,2017-01-01T00:00:00,10,600\n"
            "2017-01-01T00:15:00,2017-01-01T00:10:00,40,1\n"
            "2017-01-01T00:30:00,2017-01-01T00:00:00,10,100\n"
            "2017-01-01T00:30:00,2017-01-01T00:10:00,40,1\n")
    s = ingest_intraday(write(tmp_path, text))
    avg = (6000 + 40) / 601
    assert s.diffs.tolist() == [pytest.approx(40 - 1.25 * avg)]


def test_intraday_skips_bad_rows(tmp_path):
    text = ("2017-01-01T00:15:00,2017-01-01T00:00:00,x,1\n"
            "2017-01-01T00:16:00,2017-01-01T00:00:00,1,1\n"
            "2017-01-01T00:15:00,2017-01-01T00:20:00,1,1\n"
            "2017-01-01T00:15:00,2017-01-01T00:00:00,1,-1\n"
            "2017-01-01T00:15:00,2017-01-01T00:00:00,5,0\n")
    s = ingest_intraday(write(tmp_path, text))
    assert s.skipped_rows == 4 and s.records == []


def test_intraday_missing_columns(tmp_path):
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ConfigError):
        ingest_intraday(tmp_path / "bad.csv")


def test_intraday_synthetic_golden():
    s = ingest_intraday(DATA / "synthetic_intraday.csv")
    assert s.summary() == {
        "intervals": 288, "skipped_rows": 3, "opportunities": 45, "factor": 1.25, "min_volume": 500.0,
        "mean_i_avg": pytest.approx(34.863548906549354, rel=1e-12),
        "mean_positive_diff": pytest.approx(13.599309462379134, rel=1e-12),
        "max_diff": pytest.approx(44.74279910763469, rel=1e-12),
    }
    assert s.hist_diff.counts == (19, 10, 6, 6, 0, 4)
    assert s.hist_avg.counts == (19, 37, 45, 46, 31, 46, 32, 22, 7, 2, 0, 1)
    assert math.isclose(s.hist_diff.bin_edges[-1], 44.74279910763469)
