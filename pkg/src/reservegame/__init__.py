"""Minority-game simulation of reserve-power arbitrage on energy markets."""

from .core import (
    NEVER_GATE, GameConfig, NoiseSpec, StrategyTable, WeightSpec, WeightVector,
    bias_from_equilibrium, config_hash, derive_seed, draw_strategies, heterogeneity,
    make_weights,
)
from .engine import Game, RunResult, run_ensemble, run_until_converged
from .errors import ConfigError, ReserveExhausted, SaturatedEquilibrium
from .prices import (
    Affine, Cutoff, Identity, MeritLadder, MeritOrder, Quadratic, ScaledLinear,
    apply_cutoff, broadening_expectation, derivative_check, eval_price,
)

__version__ = "0.1.0"
