"""Analytic reference values for the no-anti-coordination equilibrium.

Agents play +1 independently with a common probability p chosen so that the
expected price equals the intraday price.  These closed forms serve both as
standalone estimates and as test oracles for the simulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import REALISTIC_WEIGHTS, WeightVector, bias_from_equilibrium, heterogeneity
from .errors import ConfigError, SaturatedEquilibrium
from .prices import (
    Affine, Cutoff, Identity, PriceSpec, Quadratic, ScaledLinear,
    compile_price, eval_price, price_domain,
)

ROOT_RTOL = 1e-9


@dataclass(frozen=True)
class EquilibriumReport:
    a_star: float
    bias_p: float
    W: float
    X: float
    effective_agents: float
    sigma_A_pred: float
    mean_A_pred: float
    sigma_over_mean: float
    saturated: bool = False


def _weights(weights) -> np.ndarray:
    w = weights.w if isinstance(weights, WeightVector) else np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ConfigError("weights must be a non-empty vector")
    return w


def _closed_form(spec: PriceSpec, target: float, n_agents: int | None) -> float | None:
    if isinstance(spec, Identity):
        return target
    if isinstance(spec, ScaledLinear):
        n = spec.n if spec.n is not None else n_agents
        if n is None:
            raise ConfigError("ScaledLinear price needs the number of agents")
        return target * n / spec.c
    if isinstance(spec, Affine):
        return spec.a_star + (target - spec.intraday) / spec.c1
    if isinstance(spec, Quadratic):
        disc = 1.0 + 4.0 * spec.c2 * target
        if disc < 0:
            return None  # no crossing; bisection reports the saturation case
        # rationalised root on the monotone branch, stable as c2 -> 0
        return 2.0 * target / (1.0 + math.sqrt(disc))
    return None


def _default_bracket(spec: PriceSpec, target: float, cp) -> tuple[float, float]:
    lo, hi = price_domain(spec)
    inner = spec.inner if isinstance(spec, Cutoff) else spec
    if isinstance(inner, Quadratic):
        mlo, mhi = inner.monotone_region()
        lo, hi = max(lo, mlo), min(hi, mhi)
    # grow any open end until it brackets the target
    span = max(1.0, abs(target))
    if math.isinf(lo):
        lo = min(0.0, hi) - span if math.isfinite(hi) else -span
        while eval_price(cp, lo) > target and lo > -1e300:
            lo *= 2.0
    if math.isinf(hi):
        hi = max(0.0, lo) + span
        while eval_price(cp, hi) < target and hi < 1e300:
            hi *= 2.0
    return lo, hi


def solve_a_star(spec: PriceSpec, intraday_price: float, eta_mean: float = 0.0,
                 bracket: tuple[float, float] | None = None,
                 n_agents: int | None = None) -> float:
    """Arbitrage level A* at which R(A* + eta_mean) equals the intraday price.

    Linear families use their closed form.  Everything else is bisected on a
    bracket (given, or derived from the price's domain and monotone region)
    until the residual is below ``1e-9 * max(1, |I|)``.  If R jumps over I,
    as at the kink of a cut-off price, the jump location is returned.

    Raises :class:`SaturatedEquilibrium` when the bracket holds no crossing:
    case 1 if R stays below I (everyone sells), case 2 if it stays above.
    """
    target = float(intraday_price)
    exact = _closed_form(spec, target, n_agents)
    if exact is not None and bracket is None:
        return exact - eta_mean
    cp = compile_price(spec, n_agents)
    if exact is not None:
        a = exact - eta_mean
        lo, hi = bracket
        if a > hi:
            raise SaturatedEquilibrium(1, hi)
        if a < lo:
            raise SaturatedEquilibrium(2, lo)
        return a
    if bracket is None:
        x_lo, x_hi = _default_bracket(spec, target, cp)
    else:
        x_lo, x_hi = bracket[0] + eta_mean, bracket[1] + eta_mean
    tol = ROOT_RTOL * max(1.0, abs(target))
    f_lo = eval_price(cp, x_lo) - target
    f_hi = eval_price(cp, x_hi) - target
    if f_hi < -tol:
        raise SaturatedEquilibrium(1, x_hi - eta_mean)
    if f_lo > tol:
        raise SaturatedEquilibrium(2, x_lo - eta_mean)
    if abs(f_lo) <= tol:
        return x_lo - eta_mean
    if abs(f_hi) <= tol:
        return x_hi - eta_mean
    while x_hi - x_lo > 1e-12 * max(1.0, abs(x_lo), abs(x_hi)):
        mid = 0.5 * (x_lo + x_hi)
        f = eval_price(cp, mid) - target
        if abs(f) <= tol:
            return mid - eta_mean
        if f < 0:
            x_lo = mid
        else:
            x_hi = mid
    # R jumps across I inside a tiny bracket; the cut-off kink sits at 0
    if x_lo <= 0.0 <= x_hi:
        return 0.0 - eta_mean
    return x_hi - eta_mean


def nash_variance(weights, a_star: float) -> EquilibriumReport:
    """Mean and spread of A = sum w_i a_i with independent a_i at bias p.

    sigma_A^2 = (W^2 - A*^2) X / N.  For |A*| >= W every agent plays the same
    action and the report is saturated with zero spread.
    """
    w = _weights(weights)
    X, eff = heterogeneity(w)
    W = float(w.sum())
    a = float(a_star)
    if abs(a) >= W:
        a_sat = math.copysign(W, a)
        return EquilibriumReport(a_sat, 1.0 if a > 0 else 0.0, W, X, eff, 0.0, a_sat, 0.0, True)
    sigma = math.sqrt((W * W - a * a) * X / w.size)
    ratio = sigma / abs(a) if a != 0 else math.inf
    return EquilibriumReport(a, bias_from_equilibrium(a, W), W, X, eff, sigma, a, ratio)


def enumerate_variance(weights, bias_p: float) -> tuple[float, float]:
    """Exact mean and variance of sum w_i a_i by summing over all 2^N profiles."""
    w = _weights(weights)
    n = w.size
    if n > 20:
        raise ConfigError("exhaustive enumeration is limited to 20 agents")
    bits = (np.arange(2 ** n)[:, None] >> np.arange(n)) & 1
    actions = 2 * bits - 1
    k = bits.sum(axis=1)
    prob = bias_p ** k * (1.0 - bias_p) ** (n - k)
    A = actions @ w
    mean = float(prob @ A)
    return mean, float(prob @ (A - mean) ** 2)


def quadratic_mean_shift(c1: float, c2: float, var_A: float, var_eta: float, a_star: float) -> float:
    """<A> solving <I - R> = 0 for a price quadratic around A*."""
    if not c1 > 0:
        raise ConfigError("c1 must be > 0")
    return a_star - (c2 / c1) * (var_A + var_eta)


def collapse_normalizer(weights, a_star: float) -> float:
    """sqrt((W^2 - A*^2) X / N), the equilibrium spread used to rescale sigma_A."""
    rep = nash_variance(weights, a_star)
    if rep.saturated or rep.sigma_A_pred == 0:
        raise ConfigError("saturated equilibrium has a zero normalizer")
    return rep.sigma_A_pred


def scaling_prediction(weights, a_star: float, alpha: float | None = None) -> float:
    """Normalizer for collapse plots.

    The collapse function of alpha itself is measured, not predicted, so
    ``alpha`` only documents the call site.
    """
    return collapse_normalizer(weights, a_star)


def collapse_variable(sigma_A: float, weights, a_star: float) -> float:
    return sigma_A / collapse_normalizer(weights, a_star)


def added_arbitrageur_factor(weights, new_weight: float, mean_A: float) -> float:
    """First-order growth factor of sigma_A^2 when an agent of weight w_j joins."""
    w = _weights(weights)
    W = float(w.sum())
    if abs(mean_A) >= W:
        raise ConfigError("|mean_A| must be below W")
    wj = float(new_weight)
    return 1.0 + wj * 2.0 * mean_A ** 2 / (W * (W * W - mean_A ** 2)) + wj * wj / float(w @ w)


def realistic_spread_estimate(w_over_mean: float = math.sqrt(5.0),
                              effective_agents: float | None = None) -> float:
    """sigma_A / mu_A = sqrt(W^2/mu^2 - 1) / sqrt(N/X) for the realistic market.

    ``effective_agents`` defaults to N/X of the built-in realistic weights.
    """
    if effective_agents is None:
        effective_agents = heterogeneity(np.array(REALISTIC_WEIGHTS))[1]
    if not w_over_mean >= 1:
        raise ConfigError("W / mu_A must be >= 1")
    return math.sqrt(w_over_mean ** 2 - 1.0) / math.sqrt(effective_agents)


def equilibrium_report(spec: PriceSpec, intraday_price: float, weights,
                       eta_mean: float = 0.0) -> EquilibriumReport:
    """Solve for A* and return the matching equilibrium statistics."""
    w = _weights(weights)
    try:
        a = solve_a_star(spec, intraday_price, eta_mean, n_agents=w.size)
    except SaturatedEquilibrium as exc:
        a = exc.a_star
    return nash_variance(w, a)
