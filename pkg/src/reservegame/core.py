"""Domain types shared by the engine and the analytic oracle.

Random streams
--------------
Every run has one 64-bit root seed.  Independent streams are derived from it
with numpy's ``SeedSequence`` spawn keys, so adding agents or changing one
stream never perturbs another:

====================  =====================
stream                spawn key
====================  =====================
strategies, agent i   ``(STREAM_STRATEGIES, i)``
information signal    ``(STREAM_SIGNAL,)``
external noise        ``(STREAM_NOISE,)``
tie breaking          ``(STREAM_TIES,)``
sampled weights       ``(STREAM_WEIGHTS,)``
ensemble sample k     ``(STREAM_SAMPLES, k)`` (a new root seed)
====================  =====================
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .prices import PriceSpec, ScaledLinear, price_from_flat, price_to_flat

STREAM_STRATEGIES = 0
STREAM_SIGNAL = 1
STREAM_NOISE = 2
STREAM_TIES = 3
STREAM_WEIGHTS = 4
STREAM_SAMPLES = 5

# An agent with this risk aversion is never gated: it always plays.
NEVER_GATE = float("-inf")

REALISTIC_WEIGHTS = (400.0,) * 5 + (160.0,) * 5 + (120.0,) * 10 + (15.0,) * 100


def derive_seed(root: int, *key: int) -> int:
    """Deterministic 64-bit child seed of ``root`` along spawn ``key``."""
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_stream(root: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


# -- weights ------------------------------------------------------------------

@dataclass(frozen=True)
class WeightVector:
    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ConfigError("weights must be a non-empty vector")
        if (w < 0).any() or not np.isfinite(w).all():
            raise ConfigError("weights must be finite and non-negative")
        if not w.sum() > 0:
            raise ConfigError("total weight must be positive")
        w.flags.writeable = False
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.w.size

    @property
    def total(self) -> float:
        return math.fsum(self.w)

    @property
    def heterogeneity(self) -> float:
        return heterogeneity(self.w)[0]

    @property
    def effective_agents(self) -> float:
        return heterogeneity(self.w)[1]


def heterogeneity(weights) -> tuple[float, float]:
    """Return (X, N/X) with X = mean(w^2) / mean(w)^2."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0 or not (w > 0).any():
        raise ValueError("heterogeneity needs at least one positive weight")
    n = w.size
    x = (math.fsum(w * w) / n) / (math.fsum(w) / n) ** 2
    return x, n / x


@dataclass(frozen=True)
class WeightSpec:
    """How to obtain the weight vector of a game.

    kind: ``uniform`` (``total`` spread evenly, default N), ``exponential``,
    ``pareto`` (density ~ w**-exponent above ``lower``), ``realistic`` (the
    fixed 120-party table in MW) or ``explicit`` (``values``).  Sampled
    families are rescaled after drawing so their mean equals ``mean``;
    ``realistic`` is rescaled only if ``mean`` is given.
    """

    kind: str = "uniform"
    total: float | None = None
    mean: float | None = None
    exponent: float = 4.0
    lower: float = 2.0 / 3.0
    values: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("uniform", "exponential", "pareto", "realistic", "explicit"):
            raise ConfigError(f"unknown weight distribution {self.kind!r}")
        if self.kind == "explicit" and not self.values:
            raise ConfigError("explicit weights need values")
        if self.kind == "pareto" and not self.exponent > 3:
            raise ConfigError("pareto exponent must exceed 3 for a finite second moment")
        if self.values is not None:
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @property
    def sampled(self) -> bool:
        return self.kind in ("exponential", "pareto")


def make_weights(spec: WeightSpec, n_agents: int, rng: np.random.Generator | None = None) -> WeightVector:
    if n_agents < 1:
        raise ConfigError("n_agents must be >= 1")
    if spec.kind == "uniform":
        total = float(n_agents) if spec.total is None else float(spec.total)
        return WeightVector(np.full(n_agents, total / n_agents))
    if spec.kind == "realistic":
        if n_agents != len(REALISTIC_WEIGHTS):
            raise ConfigError(f"realistic weights need exactly {len(REALISTIC_WEIGHTS)} agents")
        w = np.array(REALISTIC_WEIGHTS)
        if spec.mean is not None:
            w = w * (spec.mean / w.mean())
        return WeightVector(w)
    if spec.kind == "explicit":
        if len(spec.values) != n_agents:
            raise ConfigError("explicit weight vector length differs from n_agents")
        return WeightVector(np.array(spec.values))
    if rng is None:
        raise ConfigError(f"{spec.kind} weights need a random stream")
    if spec.kind == "exponential":
        w = rng.exponential(1.0, n_agents)
    else:
        # numpy's pareto() is the Lomax form; shift and scale to support (lower, inf)
        w = (rng.pareto(spec.exponent - 1.0, n_agents) + 1.0) * spec.lower
    target = 1.0 if spec.mean is None else spec.mean
    return WeightVector(w * (target / w.mean()))


# -- noise and strategies -----------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "none"
    sigma_eta: float = 0.0
    mean: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "gaussian"):
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if not self.sigma_eta >= 0:
            raise ConfigError("sigma_eta must be >= 0")

    @property
    def active(self) -> bool:
        return self.kind == "gaussian" and (self.sigma_eta > 0 or self.mean != 0)


@dataclass(frozen=True)
class StrategyTable:
    """N x S x P table of +-1 decisions; read-only once drawn."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.array(self.entries, dtype=np.int8)
        if e.ndim != 3:
            raise ConfigError("strategy table must be N x S x P")
        if not np.isin(e, (-1, 1)).all():
            raise ConfigError("strategy entries must be +-1")
        e.flags.writeable = False
        object.__setattr__(self, "entries", e)

    @property
    def shape(self):
        return self.entries.shape

    def by_signal(self) -> np.ndarray:
        """P x N x S copy, contiguous for the kernel."""
        return np.ascontiguousarray(self.entries.transpose(2, 0, 1))


def draw_strategies(n_agents: int, n_strategies: int, n_patterns: int, bias: float, seed: int) -> StrategyTable:
    """Each entry is +1 with probability ``bias``, drawn per agent from its own stream."""
    table = np.empty((n_agents, n_strategies, n_patterns), dtype=np.int8)
    for i in range(n_agents):
        u = make_stream(seed, STREAM_STRATEGIES, i).random((n_strategies, n_patterns))
        table[i] = np.where(u < bias, 1, -1)
    return StrategyTable(table)


def bias_from_equilibrium(a_star: float, W: float) -> float:
    """Probability of +1 in the no-anti-coordination equilibrium, 1/2 + A*/(2W), clipped."""
    if not W > 0:
        raise ValueError("W must be positive")
    return min(1.0, max(0.0, 0.5 + a_star / (2.0 * W)))


# -- configuration ------------------------------------------------------------

@dataclass(frozen=True)
class GameConfig:
    n_agents: int
    n_patterns: int
    n_strategies: int = 2
    intraday_price: float = 0.0
    risk_aversion: float | tuple[float, ...] = NEVER_GATE
    weights: WeightSpec = field(default_factory=WeightSpec)
    price: PriceSpec = field(default_factory=ScaledLinear)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    strategy_bias: float = 0.5
    seed: int = 0
    max_steps: int = 2_000_000
    convergence_tol: float = 1e-3
    sample_count: int = 100
    # evaluations use the realised price R(A + eta); False uses R(A)
    eval_uses_noise: bool = True
    # gated agents keep updating their evaluations unless this is set
    freeze_inactive: bool = False

    def __post_init__(self):
        for name in ("n_agents", "n_patterns", "n_strategies", "max_steps", "sample_count"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        eps = self.risk_aversion
        if np.ndim(eps) == 0:
            eps = (float(eps),) * self.n_agents
        eps = tuple(float(e) for e in eps)
        if len(eps) != self.n_agents:
            raise ConfigError("risk_aversion length differs from n_agents")
        if any(math.isnan(e) or e == math.inf for e in eps):
            raise ConfigError("risk_aversion entries must be in [-inf, inf)")
        object.__setattr__(self, "risk_aversion", eps)
        object.__setattr__(self, "strategy_bias", min(1.0, max(0.0, float(self.strategy_bias))))
        if self.weights.kind == "realistic" and self.n_agents != len(REALISTIC_WEIGHTS):
            raise ConfigError(f"realistic weights need exactly {len(REALISTIC_WEIGHTS)} agents")
        if not self.convergence_tol > 0:
            raise ConfigError("convergence_tol must be > 0")

    @property
    def alpha(self) -> float:
        return self.n_patterns / self.n_agents

    @property
    def gated(self) -> np.ndarray:
        """Boolean mask of agents subject to the risk-aversion gate."""
        return np.array([e != NEVER_GATE for e in self.risk_aversion], dtype=bool)

    def with_(self, **changes) -> "GameConfig":
        return replace(self, **changes)

    def resolve_weights(self) -> WeightVector:
        rng = make_stream(self.seed, STREAM_WEIGHTS) if self.weights.sampled else None
        return make_weights(self.weights, self.n_agents, rng)

    def to_flat(self) -> dict[str, str]:
        d: dict[str, str] = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "risk_aversion":
                d[f.name] = _vector_text(v)
            elif f.name == "weights":
                d.update(_weights_flat(v))
            elif f.name == "price":
                d.update(price_to_flat(v))
            elif f.name == "noise":
                d.update({"noise.kind": v.kind, "noise.sigma_eta": repr(float(v.sigma_eta)),
                          "noise.mean": repr(float(v.mean))})
            elif isinstance(v, bool):
                d[f.name] = "true" if v else "false"
            elif isinstance(v, float):
                d[f.name] = repr(v)
            else:
                d[f.name] = str(v)
        return d

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in sorted(self.to_flat().items()))

    @property
    def config_hash(self) -> str:
        return config_hash(self)

    @classmethod
    def from_flat(cls, d: dict[str, str], base_dir=None) -> "GameConfig":
        kw = {}
        try:
            for name in ("n_agents", "n_patterns", "n_strategies", "seed", "max_steps", "sample_count"):
                if name in d:
                    kw[name] = int(d[name])
            for name in ("intraday_price", "strategy_bias", "convergence_tol"):
                if name in d:
                    kw[name] = float(d[name])
            for name in ("eval_uses_noise", "freeze_inactive"):
                if name in d:
                    kw[name] = _parse_bool(d[name])
            if "risk_aversion" in d:
                kw["risk_aversion"] = _parse_vector(d["risk_aversion"], base_dir)
            kw["weights"] = _weights_from_flat(d, base_dir)
            kw["price"] = price_from_flat(d, "price", base_dir) if "price.kind" in d else ScaledLinear()
            kw["noise"] = NoiseSpec(d.get("noise.kind", "none"), float(d.get("noise.sigma_eta", 0)),
                                    float(d.get("noise.mean", 0)))
            known = {f.name for f in fields(cls)}
            for k in d:
                if k.split(".")[0] not in known:
                    raise ConfigError(f"unknown config key {k!r}")
            return cls(**kw)
        except KeyError as exc:
            raise ConfigError(f"missing config key {exc.args[0]}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_text(cls, text: str, base_dir=None) -> "GameConfig":
        d = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            k, v = line.split("=", 1)
            d[k.strip()] = v.strip()
        return cls.from_flat(d, base_dir)

    @classmethod
    def load(cls, path) -> "GameConfig":
        path = Path(path)
        return cls.from_text(path.read_text(), base_dir=path.parent)


def config_hash(config: GameConfig) -> str:
    """Stable 64-bit hash (16 hex digits) of the canonical config text."""
    return hashlib.blake2b(config.to_text().encode(), digest_size=8).hexdigest()


def _vector_text(v: Sequence[float]) -> str:
    if len(set(v)) == 1:
        return _num(v[0])
    return ",".join(_num(x) for x in v)


def _num(x: float) -> str:
    if x == NEVER_GATE:
        return "-inf"
    return repr(float(x))


def _parse_vector(text: str, base_dir=None):
    text = text.strip()
    if text.startswith("@"):
        p = Path(text[1:])
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        text = p.read_text().replace("\n", ",")
    items = [t.strip() for t in text.split(",") if t.strip()]
    vals = tuple(NEVER_GATE if t.lower() in ("never", "-inf") else float(t) for t in items)
    return vals[0] if len(vals) == 1 else vals


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _weights_flat(spec: WeightSpec) -> dict[str, str]:
    d = {"weights.kind": spec.kind}
    if spec.total is not None:
        d["weights.total"] = repr(float(spec.total))
    if spec.mean is not None:
        d["weights.mean"] = repr(float(spec.mean))
    if spec.kind == "pareto":
        d["weights.exponent"] = repr(float(spec.exponent))
        d["weights.lower"] = repr(float(spec.lower))
    if spec.values is not None:
        d["weights.values"] = ",".join(repr(v) for v in spec.values)
    return d


def _weights_from_flat(d: dict[str, str], base_dir=None) -> WeightSpec:
    kw = {"kind": d.get("weights.kind", "uniform").strip()}
    for name in ("total", "mean", "exponent", "lower"):
        if f"weights.{name}" in d:
            kw[name] = float(d[f"weights.{name}"])
    if "weights.values" in d:
        v = _parse_vector(d["weights.values"], base_dir)
        kw["values"] = v if isinstance(v, tuple) else (v,)
    return WeightSpec(**kw)
