import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reservegame import ConfigError, SaturatedEquilibrium
from reservegame.core import REALISTIC_WEIGHTS
from reservegame.equilibrium import (
    added_arbitrageur_factor, collapse_variable, enumerate_variance, equilibrium_report,
    nash_variance, quadratic_mean_shift, realistic_spread_estimate, scaling_prediction, solve_a_star,
)
from reservegame.prices import (
    Affine, Cutoff, Identity, MeritOrder, Quadratic, ScaledLinear, eval_price, sample_ladder,
)


def test_identity_a_star():
    assert solve_a_star(Identity(), 500.0) == 500.0
    assert solve_a_star(Identity(), 0.0) == 0.0
    assert solve_a_star(Identity(), 500.0, eta_mean=20.0) == 480.0


def test_scaled_linear_and_affine_a_star():
    assert solve_a_star(ScaledLinear(2.0), 10.0, n_agents=40) == 200.0
    assert solve_a_star(Affine(50.0, 2.0, 100.0), 70.0) == 110.0
    with pytest.raises(ConfigError):
        solve_a_star(ScaledLinear(), 1.0)


def test_quadratic_a_star_matches_quadratic_formula():
    c2, target = 1 / 500, 100.0
    root = (-1 + math.sqrt(1 + 4 * c2 * target)) / (2 * c2)
    a = solve_a_star(Quadratic(c2), target)
    assert a == pytest.approx(root, rel=1e-9)
    # both stop once the price residual is below 1e-9 * I
    assert a == pytest.approx(solve_a_star(Quadratic(c2), target, bracket=(0.0, 500.0)), rel=1e-8)


def test_concave_quadratic_uses_monotone_branch():
    a = solve_a_star(Quadratic(-1 / 2000), 100.0)
    assert a < 1000.0
    assert eval_price(Quadratic(-1 / 2000), a) == pytest.approx(100.0, abs=1e-7)


def test_merit_a_star():
    lad = sample_ladder()
    a = solve_a_star(MeritOrder(lad), 300.0)
    assert eval_price(MeritOrder(lad), a) == pytest.approx(300.0, abs=1e-6)


def test_cutoff_a_star_at_kink():
    assert solve_a_star(Cutoff(MeritOrder(sample_ladder()), 40.0), 40.0) == 0.0


def test_saturated_cases():
    lad = sample_ladder()
    with pytest.raises(SaturatedEquilibrium) as exc:
        solve_a_star(MeritOrder(lad), 1e6)
    assert exc.value.case == 1
    with pytest.raises(SaturatedEquilibrium) as exc:
        solve_a_star(MeritOrder(lad), -1e6)
    assert exc.value.case == 2
    with pytest.raises(SaturatedEquilibrium):
        solve_a_star(Identity(), 10.0, bracket=(-5.0, 5.0))


@settings(max_examples=40, deadline=None)
@given(st.floats(-0.999, 0.999).filter(lambda f: abs(f) > 1e-6))
def test_solve_is_idempotent(frac):
    # targets come from R itself, which skips the price gap at x = 0
    spec = MeritOrder(sample_ladder())
    target = float(eval_price(spec, frac * 2100.0))
    a = solve_a_star(spec, target)
    assert eval_price(spec, a) == pytest.approx(target, abs=1e-9 * max(1, abs(target)))
    assert solve_a_star(spec, eval_price(spec, a)) == pytest.approx(a, abs=1e-9 * max(1, abs(a)))


def test_nash_variance_examples():
    r = nash_variance(np.ones(1025), 0.0)
    assert r.sigma_A_pred / math.sqrt(1025) == pytest.approx(1.0)
    assert r.bias_p == 0.5 and r.mean_A_pred == 0.0 and math.isinf(r.sigma_over_mean)
    r = nash_variance(np.ones(10), 10.0)
    assert r.saturated and r.sigma_A_pred == 0.0 and r.bias_p == 1.0


@pytest.mark.parametrize("n", [1, 4, 9, 12])
def test_nash_variance_matches_enumeration(n):
    rng = np.random.default_rng(n)
    w = rng.exponential(size=n)
    a = 0.3 * w.sum()
    rep = nash_variance(w, a)
    mean, var = enumerate_variance(w, rep.bias_p)
    assert mean == pytest.approx(a, rel=1e-12)
    assert var == pytest.approx(rep.sigma_A_pred ** 2, rel=1e-12)


def test_nash_variance_monte_carlo():
    rng = np.random.default_rng(11)
    w = rng.exponential(size=1000)
    rep = nash_variance(w, 0.2 * w.sum())
    A = np.zeros(1_000_000)
    for chunk in range(10):
        a = np.where(rng.random((100_000, 1000)) < rep.bias_p, 1.0, -1.0)
        A[chunk * 100_000:(chunk + 1) * 100_000] = a @ w
    assert A.std() == pytest.approx(rep.sigma_A_pred, rel=0.01)


def test_realistic_estimates():
    X = nash_variance(np.array(REALISTIC_WEIGHTS, dtype=float), 0.0).X
    assert X == pytest.approx(120 / 27.64, rel=1e-3)
    assert realistic_spread_estimate() == pytest.approx(0.4, abs=0.05)
    assert realistic_spread_estimate(1.0) == 0.0


@pytest.mark.parametrize("c2,var,expected", [(0.0, 2500.0, 100.0), (1 / 500, 2500.0, 95.0), (1 / 500, 5000.0, 90.0)])
def test_quadratic_mean_shift(c2, var, expected):
    assert quadratic_mean_shift(1.0, c2, var - 500.0, 500.0, 100.0) == pytest.approx(expected)


def test_collapse_of_equilibrium_is_one():
    w = np.ones(200)
    rep = nash_variance(w, 50.0)
    assert collapse_variable(rep.sigma_A_pred, w, 50.0) == pytest.approx(1.0)
    assert scaling_prediction(w, 50.0, alpha=2.0) == rep.sigma_A_pred
    with pytest.raises(ConfigError):
        scaling_prediction(w, 200.0)


def test_added_arbitrageur_examples():
    w = np.ones(100)
    assert added_arbitrageur_factor(w, 0.0, 30.0) == 1.0
    assert added_arbitrageur_factor(w, 2.0, 0.0) == pytest.approx(1 + 4 / 100)


def test_added_arbitrageur_against_exact_recomputation():
    # N=100 unit agents at mean 50; one more unit agent joins and the bias re-adjusts
    w, mu = np.ones(100), 50.0
    before = nash_variance(w, mu).sigma_A_pred ** 2
    after = nash_variance(np.ones(101), mu).sigma_A_pred ** 2
    exact = after / before
    approx = added_arbitrageur_factor(w, 1.0, mu)
    assert approx > 1 and exact > 1
    assert approx == pytest.approx(exact, rel=2e-4)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.1, 10.0), min_size=2, max_size=30), st.floats(0.0, 0.99),
       st.floats(1e-3, 1.0))
def test_added_arbitrageur_always_harms(weights, frac, wj):
    w = np.array(weights)
    assert added_arbitrageur_factor(w, wj, frac * w.sum()) > 1.0


def test_equilibrium_report_saturates():
    lad = sample_ladder()
    rep = equilibrium_report(MeritOrder(lad), 1e6, np.full(10, 5.0))
    assert rep.saturated and rep.a_star == 50.0
    rep = equilibrium_report(Identity(), 20.0, np.ones(100))
    assert rep.a_star == 20.0 and rep.bias_p == 0.6 and rep.mean_A_pred == 20.0
