import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reservegame import (
    NEVER_GATE, ConfigError, GameConfig, NoiseSpec, WeightSpec, WeightVector,
    bias_from_equilibrium, derive_seed, draw_strategies, heterogeneity, make_weights,
)
from reservegame.core import REALISTIC_WEIGHTS, StrategyTable, make_stream
from reservegame.prices import Cutoff, Identity, MeritLadder, MeritOrder, Quadratic


def test_uniform_weights_have_unit_heterogeneity():
    X, eff = heterogeneity(np.ones(50))
    assert X == 1.0 and eff == 50.0


def test_single_nonzero_weight():
    X, eff = heterogeneity(np.array([1.0, 0.0, 0.0, 0.0]))
    assert X == pytest.approx(4.0) and eff == pytest.approx(1.0)


def test_all_zero_weights_rejected():
    with pytest.raises(ValueError):
        heterogeneity(np.zeros(3))


def test_realistic_table():
    w = make_weights(WeightSpec("realistic"), 120)
    assert w.total == 5500.0
    assert list(w.w[:5]) == [400.0] * 5
    assert list(w.w[5:10]) == [160.0] * 5
    assert list(w.w[10:20]) == [120.0] * 10
    assert list(w.w[20:]) == [15.0] * 100


def test_realistic_needs_120_agents():
    with pytest.raises(ConfigError):
        make_weights(WeightSpec("realistic"), 100)
    with pytest.raises(ConfigError):
        GameConfig(n_agents=100, n_patterns=10, weights=WeightSpec("realistic"))


def test_sampled_weights_rescaled_to_unit_mean():
    for kind in ("exponential", "pareto"):
        w = make_weights(WeightSpec(kind), 1000, np.random.default_rng(0))
        assert w.w.mean() == pytest.approx(1.0)


@pytest.mark.parametrize("kind,expected", [("exponential", 2.0), ("pareto", 4.0 / 3.0)])
def test_sampled_heterogeneity_limits(kind, expected):
    w = make_weights(WeightSpec(kind), 100_000, np.random.default_rng(12))
    assert w.heterogeneity == pytest.approx(expected, abs=0.05)


def test_pareto_support():
    w = make_weights(WeightSpec("pareto", mean=None), 10_000, np.random.default_rng(1))
    # default lower bound 2/3 gives population mean 1, so rescaling barely moves it
    assert 0.6 < w.w.min() < 2 / 3 + 0.05


def test_weight_vector_read_only():
    w = WeightVector(np.ones(3))
    with pytest.raises(ValueError):
        w.w[0] = 2.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.01, 100.0), min_size=1, max_size=40), st.floats(0.1, 50.0))
def test_heterogeneity_properties(values, c):
    w = np.array(values)
    X, eff = heterogeneity(w)
    assert X >= 1.0 - 1e-12
    assert eff <= len(w) + 1e-9
    assert heterogeneity(c * w)[0] == pytest.approx(X, rel=1e-12)


def test_draw_strategies_degenerate_bias():
    t = draw_strategies(5, 2, 7, 1.0, seed=3)
    assert (t.entries == 1).all()
    t = draw_strategies(5, 2, 7, 0.0, seed=3)
    assert (t.entries == -1).all()


@pytest.mark.parametrize("bias,mean", [(0.5, 0.0), (0.75, 0.5)])
def test_draw_strategies_mean(bias, mean):
    t = draw_strategies(1000, 2, 500, bias, seed=9)
    assert t.entries.mean() == pytest.approx(mean, abs=0.01)


def test_draw_strategies_reproducible_and_immutable():
    a = draw_strategies(20, 3, 11, 0.6, seed=42)
    b = draw_strategies(20, 3, 11, 0.6, seed=42)
    assert np.array_equal(a.entries, b.entries)
    with pytest.raises(ValueError):
        a.entries[0, 0, 0] = 1


def test_strategy_rows_independent_of_population_size():
    a = draw_strategies(10, 2, 5, 0.5, seed=1)
    b = draw_strategies(30, 2, 5, 0.5, seed=1)
    assert np.array_equal(a.entries, b.entries[:10])


def test_strategy_table_validation():
    with pytest.raises(ConfigError):
        StrategyTable(np.zeros((2, 2, 2)))
    with pytest.raises(ConfigError):
        StrategyTable(np.ones((2, 2)))


@pytest.mark.parametrize("a_star,W,p", [(0, 1025, 0.5), (2000, 2000, 1.0), (500, 2000, 0.625),
                                        (-3000, 2000, 0.0)])
def test_bias_from_equilibrium(a_star, W, p):
    assert bias_from_equilibrium(a_star, W) == p


def test_bias_needs_positive_W():
    with pytest.raises(ValueError):
        bias_from_equilibrium(0.0, 0.0)


def test_seed_streams_are_independent_and_stable():
    assert derive_seed(7, 1) == derive_seed(7, 1)
    assert derive_seed(7, 1) != derive_seed(7, 2)
    assert derive_seed(7, 0, 3) != derive_seed(7, 0, 4)
    x = make_stream(5, 2).random(4)
    y = make_stream(5, 2).random(4)
    assert np.array_equal(x, y)


def test_noise_spec():
    assert not NoiseSpec().active
    assert not NoiseSpec("gaussian", 0.0).active
    assert NoiseSpec("gaussian", 2.0).active
    with pytest.raises(ConfigError):
        NoiseSpec("cauchy", 1.0)
    with pytest.raises(ConfigError):
        NoiseSpec("gaussian", -1.0)


def test_config_broadcasts_risk_aversion():
    cfg = GameConfig(n_agents=4, n_patterns=2, risk_aversion=1.5)
    assert cfg.risk_aversion == (1.5,) * 4
    assert cfg.gated.all()
    cfg = GameConfig(n_agents=3, n_patterns=2)
    assert not cfg.gated.any()
    assert cfg.alpha == pytest.approx(2 / 3)


@pytest.mark.parametrize("kw", [dict(n_agents=0), dict(n_patterns=-1), dict(risk_aversion=(1.0, 2.0)),
                                dict(risk_aversion=math.nan), dict(convergence_tol=0.0), dict(seed=-1)])
def test_config_validation(kw):
    base = dict(n_agents=3, n_patterns=2)
    base.update(kw)
    with pytest.raises(ConfigError):
        GameConfig(**base)


def test_strategy_bias_clipped():
    assert GameConfig(n_agents=2, n_patterns=1, strategy_bias=1.3).strategy_bias == 1.0


ROUND_TRIP = [
    GameConfig(n_agents=5, n_patterns=3),
    GameConfig(n_agents=4, n_patterns=9, n_strategies=3, intraday_price=12.5,
               risk_aversion=(NEVER_GATE, 0.0, 1.0, 2.5), price=Quadratic(0.002),
               noise=NoiseSpec("gaussian", 50.0), strategy_bias=0.625, seed=2**63 + 5,
               eval_uses_noise=False, freeze_inactive=True),
    GameConfig(n_agents=120, n_patterns=120, weights=WeightSpec("realistic", mean=1.0),
               price=Cutoff(Identity(), 40.0, 1.1)),
    GameConfig(n_agents=3, n_patterns=2, weights=WeightSpec("explicit", values=(1.0, 2.5, 0.1)),
               price=MeritOrder(MeritLadder(((10.0, 1.0), (5.0, 3.0)), ((7.0, -1.0),)))),
    GameConfig(n_agents=30, n_patterns=2, weights=WeightSpec("pareto", mean=2.0, exponent=5.0, lower=0.5)),
]


@pytest.mark.parametrize("cfg", ROUND_TRIP)
def test_config_text_round_trip(cfg):
    text = cfg.to_text()
    back = GameConfig.from_text(text)
    assert back == cfg
    assert back.to_text() == text
    assert back.config_hash == cfg.config_hash
    assert len(cfg.config_hash) == 16


def test_config_hash_changes_with_content():
    a = GameConfig(n_agents=5, n_patterns=3)
    assert a.config_hash != a.with_(seed=1).config_hash


def test_config_file_references(tmp_path):
    (tmp_path / "eps.txt").write_text("0\n1\n-inf\n")
    (tmp_path / "g.cfg").write_text("n_agents = 3\nn_patterns = 2  # comment\nrisk_aversion = @eps.txt\n")
    cfg = GameConfig.load(tmp_path / "g.cfg")
    assert cfg.risk_aversion == (0.0, 1.0, NEVER_GATE)


@pytest.mark.parametrize("text", ["n_agents = 3\nn_patterns = 2\nbogus = 1\n", "n_agents = 3\n",
                                  "n_agents 3\n", "n_agents = 3\nn_patterns = 2\nfreeze_inactive = maybe\n"])
def test_config_text_errors(text):
    with pytest.raises(ConfigError):
        GameConfig.from_text(text)


def test_resolve_weights_deterministic():
    cfg = GameConfig(n_agents=50, n_patterns=5, weights=WeightSpec("exponential"), seed=4)
    assert np.array_equal(cfg.resolve_weights().w, cfg.resolve_weights().w)
    assert not np.array_equal(cfg.resolve_weights().w, cfg.with_(seed=5).resolve_weights().w)


def test_realistic_constant_matches_table():
    assert len(REALISTIC_WEIGHTS) == 120 and sum(REALISTIC_WEIGHTS) == 5500
