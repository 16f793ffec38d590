"""Reserve-price functions R(x) of the total imbalance x = A + eta.

Variants are small frozen dataclasses.  Every variant is lowered to a flat
numeric form (:class:`CompiledPrice`) evaluated by one numba routine, which is
shared by :func:`eval_price` and the game kernel so both see identical prices.

Merit-order prices use the average-price construction: with marginal price
p(x) from the activation ladder, R(x) is the mean of p over the interval
between 0 and x.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence, Union

import numba
import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import PchipInterpolator

from .errors import ConfigError, ReserveExhausted

KIND_IDENTITY = 0
KIND_SCALED_LINEAR = 1
KIND_AFFINE = 2
KIND_QUADRATIC = 3
KIND_MERIT = 4


@dataclass(frozen=True)
class Identity:
    """R(x) = x."""


@dataclass(frozen=True)
class ScaledLinear:
    """R(x) = c * x / N.  ``n`` may be left unset and taken from the game."""

    c: float = 1.0
    n: int | None = None


@dataclass(frozen=True)
class Affine:
    """R(x) = intraday + c1 * (x - a_star), a linearisation around A*."""

    intraday: float
    c1: float
    a_star: float


@dataclass(frozen=True)
class Quadratic:
    """R(x) = x + c2 * x**2.  Non-decreasing only for x >= -1/(2 c2) (c2 > 0)."""

    c2: float

    def monotone_region(self) -> tuple[float, float]:
        if self.c2 > 0:
            return -1.0 / (2.0 * self.c2), math.inf
        if self.c2 < 0:
            return -math.inf, -1.0 / (2.0 * self.c2)
        return -math.inf, math.inf


@dataclass(frozen=True)
class MeritLadder:
    """Reserve offers in activation order, (capacity_mw, marginal_price) each.

    ``positive_steps`` cover x > 0 outward from zero, ``negative_steps`` cover
    x < 0 outward from zero.  Marginal prices must be non-decreasing in the
    signed imbalance: rising outward on the positive side, falling (towards
    more negative prices) outward on the negative side.
    """

    positive_steps: tuple[tuple[float, float], ...]
    negative_steps: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        pos = tuple((float(c), float(p)) for c, p in self.positive_steps)
        neg = tuple((float(c), float(p)) for c, p in self.negative_steps)
        object.__setattr__(self, "positive_steps", pos)
        object.__setattr__(self, "negative_steps", neg)
        if not pos and not neg:
            raise ConfigError("merit ladder has no steps")
        for c, _ in pos + neg:
            if not c > 0:
                raise ConfigError(f"ladder capacities must be > 0, got {c}")
        pp = [p for _, p in pos]
        nn = [p for _, p in neg]
        if any(b < a for a, b in zip(pp, pp[1:])):
            raise ConfigError("positive-side marginal prices must rise outward")
        if any(b > a for a, b in zip(nn, nn[1:])):
            raise ConfigError("negative-side marginal prices must fall outward")
        if pp and nn and nn[0] > pp[0]:
            raise ConfigError("marginal price at 0- exceeds price at 0+")

    @property
    def positive_capacity(self) -> float:
        # same summation order as the kernel's step edges
        return float(np.cumsum([0.0] + [c for c, _ in self.positive_steps])[-1])

    @property
    def negative_capacity(self) -> float:
        return float(np.cumsum([0.0] + [c for c, _ in self.negative_steps])[-1])

    def edges(self) -> np.ndarray:
        """Signed step boundaries, including 0."""
        pos = np.cumsum([c for c, _ in self.positive_steps])
        neg = -np.cumsum([c for c, _ in self.negative_steps])
        return np.unique(np.concatenate([neg, [0.0], pos]))

    def marginal(self, x):
        """Piecewise-constant marginal price p(x); steps are right-closed outward."""
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, np.nan)
        if self.positive_steps:
            e = np.cumsum([c for c, _ in self.positive_steps])
            p = np.array([q for _, q in self.positive_steps])
            m = (x > 0) & (x <= e[-1])
            out[m] = p[np.searchsorted(e, x[m], side="left")]
        if self.negative_steps:
            e = np.cumsum([c for c, _ in self.negative_steps])
            p = np.array([q for _, q in self.negative_steps])
            m = (x < 0) & (-x <= e[-1])
            out[m] = p[np.searchsorted(e, -x[m], side="left")]
        out[x == 0] = _zero_price(self)
        return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class MeritOrder:
    ladder: MeritLadder


@dataclass(frozen=True)
class Cutoff:
    """Regulatory floor/ceiling around the average intraday price.

    For x > 0 the price is at least ``factor * i_avg``; for x < 0 it is at
    most ``-factor * i_avg``.
    """

    inner: "PriceSpec"
    i_avg: float
    factor: float = 1.25

    def __post_init__(self):
        if isinstance(self.inner, Cutoff):
            raise ConfigError("nested cut-off prices are not supported")
        if not self.factor > 0:
            raise ConfigError("cut-off factor must be > 0")


PriceSpec = Union[Identity, ScaledLinear, Affine, Quadratic, MeritOrder, Cutoff]


def _zero_price(ladder: MeritLadder) -> float:
    # R(0): midpoint of p(0+) and p(0-), or the one side that exists
    sides = []
    if ladder.positive_steps:
        sides.append(ladder.positive_steps[0][1])
    if ladder.negative_steps:
        sides.append(ladder.negative_steps[0][1])
    return sum(sides) / len(sides)


class CompiledPrice(NamedTuple):
    kind: int
    params: np.ndarray
    pos_edges: np.ndarray
    pos_prices: np.ndarray
    pos_cost: np.ndarray
    neg_edges: np.ndarray
    neg_prices: np.ndarray
    neg_cost: np.ndarray
    zero_price: float
    cut_on: bool
    cut_level: float
    mono_lo: float
    mono_hi: float


def _ladder_arrays(steps):
    caps = np.array([c for c, _ in steps], dtype=float)
    prices = np.array([p for _, p in steps], dtype=float)
    edges = np.concatenate([[0.0], np.cumsum(caps)])
    cost = np.concatenate([[0.0], np.cumsum(caps * prices)])
    if prices.size == 0:
        prices = np.zeros(1)
    return edges, prices, cost


def compile_price(spec: PriceSpec, n_agents: int | None = None) -> CompiledPrice:
    """Lower a price spec to the flat numeric form used by the kernels."""
    cut_on, cut_level = False, 0.0
    if isinstance(spec, Cutoff):
        cut_on, cut_level = True, spec.factor * spec.i_avg
        spec = spec.inner
    empty = np.zeros(1)
    edges0 = np.zeros(1)
    pe, pp, pc, ne, npr, nc = edges0, empty, edges0, edges0, empty, edges0
    zero = 0.0
    lo, hi = -math.inf, math.inf
    params = np.zeros(3)
    if isinstance(spec, Identity):
        kind = KIND_IDENTITY
    elif isinstance(spec, ScaledLinear):
        kind = KIND_SCALED_LINEAR
        n = spec.n if spec.n is not None else n_agents
        if n is None or n <= 0:
            raise ConfigError("ScaledLinear price needs the number of agents")
        params[0] = spec.c / n
    elif isinstance(spec, Affine):
        kind = KIND_AFFINE
        params[:] = (spec.intraday, spec.c1, spec.a_star)
    elif isinstance(spec, Quadratic):
        kind = KIND_QUADRATIC
        params[0] = spec.c2
        lo, hi = spec.monotone_region()
    elif isinstance(spec, MeritOrder):
        kind = KIND_MERIT
        pe, pp, pc = _ladder_arrays(spec.ladder.positive_steps)
        ne, npr, nc = _ladder_arrays(spec.ladder.negative_steps)
        zero = _zero_price(spec.ladder)
    else:
        raise ConfigError(f"unknown price spec {spec!r}")
    return CompiledPrice(kind, params, pe, pp, pc, ne, npr, nc, zero, cut_on, cut_level, lo, hi)


@numba.njit(cache=True)
def _ladder_average(y, edges, prices, cost):
    # mean marginal price over [0, y] for y in (0, capacity]
    j = np.searchsorted(edges, y)
    return (cost[j - 1] + (y - edges[j - 1]) * prices[j - 1]) / y


@numba.njit(cache=True)
def price_scalar(x, kind, params, pe, pp, pc, ne, npr, nc, zero_price, cut_on, cut_level):
    """Return (R(x), overshoot); a positive overshoot flags reserve exhaustion."""
    if kind == 0:
        r = x
    elif kind == 1:
        r = params[0] * x
    elif kind == 2:
        r = params[0] + params[1] * (x - params[2])
    elif kind == 3:
        r = x + params[0] * x * x
    else:
        if x > 0.0:
            cap = pe[pe.shape[0] - 1]
            if x > cap:
                return np.nan, x - cap
            r = _ladder_average(x, pe, pp, pc)
        elif x < 0.0:
            cap = ne[ne.shape[0] - 1]
            if -x > cap:
                return np.nan, -x - cap
            r = _ladder_average(-x, ne, npr, nc)
        else:
            r = zero_price
    if cut_on:
        if x > 0.0 and r < cut_level:
            r = cut_level
        elif x < 0.0 and r > -cut_level:
            r = -cut_level
    return r, 0.0


@numba.njit(cache=True)
def _price_vector(xs, kind, params, pe, pp, pc, ne, npr, nc, zero_price, cut_on, cut_level):
    out = np.empty(xs.shape[0])
    over = np.zeros(xs.shape[0])
    for k in range(xs.shape[0]):
        out[k], over[k] = price_scalar(
            xs[k], kind, params, pe, pp, pc, ne, npr, nc, zero_price, cut_on, cut_level
        )
    return out, over


def price_args(cp: CompiledPrice) -> tuple:
    """Positional arguments expected by :func:`price_scalar` after ``x``."""
    return (cp.kind, cp.params, cp.pos_edges, cp.pos_prices, cp.pos_cost,
            cp.neg_edges, cp.neg_prices, cp.neg_cost, cp.zero_price,
            cp.cut_on, cp.cut_level)


def eval_price(spec: PriceSpec | CompiledPrice, x, n_agents: int | None = None):
    """Evaluate R at scalar or array ``x``.

    Raises :class:`ReserveExhausted` if any point lies beyond a merit ladder.
    """
    cp = spec if isinstance(spec, CompiledPrice) else compile_price(spec, n_agents)
    xs = np.asarray(x, dtype=float)
    flat = np.ascontiguousarray(xs.reshape(-1))
    out, over = _price_vector(flat, *price_args(cp))
    bad = np.flatnonzero(over > 0)
    if bad.size:
        k = bad[0]
        raise ReserveExhausted(flat[k], abs(flat[k]) - over[k])
    if xs.ndim == 0:
        return float(out[0])
    return out.reshape(xs.shape)


def apply_cutoff(inner_price: float, x: float, i_avg: float, factor: float = 1.25) -> float:
    if not factor > 0:
        raise ConfigError("cut-off factor must be > 0")
    level = factor * i_avg
    if x > 0 and inner_price < level:
        return level
    if x < 0 and inner_price > -level:
        return -level
    return inner_price


def price_domain(spec: PriceSpec) -> tuple[float, float]:
    """Closed interval on which R is defined."""
    if isinstance(spec, Cutoff):
        return price_domain(spec.inner)
    if isinstance(spec, MeritOrder):
        return -spec.ladder.negative_capacity, spec.ladder.positive_capacity
    return -math.inf, math.inf


def load_ladder_csv(path) -> MeritLadder:
    """Read a ladder from CSV with columns ``sign, capacity_mw, marginal_price``.

    Rows of each sign are listed in activation order (outward from zero).
    Lines starting with ``#`` are comments.
    """
    pos, neg = [], []
    with open(path, newline="") as fh:
        rows = csv.DictReader(line for line in fh if not line.lstrip().startswith("#"))
        for row in rows:
            sign = row["sign"].strip().lower()
            step = (float(row["capacity_mw"]), float(row["marginal_price"]))
            if sign in ("+", "+1", "1", "pos", "positive"):
                pos.append(step)
            elif sign in ("-", "-1", "neg", "negative"):
                neg.append(step)
            else:
                raise ConfigError(f"bad sign {row['sign']!r} in {path}")
    return MeritLadder(tuple(pos), tuple(neg))


def save_ladder_csv(ladder: MeritLadder, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sign", "capacity_mw", "marginal_price"])
        for c, p in ladder.positive_steps:
            w.writerow(["+", repr(c), repr(p)])
        for c, p in ladder.negative_steps:
            w.writerow(["-", repr(c), repr(p)])


SAMPLE_LADDER = Path(__file__).with_name("data") / "synthetic_ladder.csv"


def sample_ladder() -> MeritLadder:
    """The bundled synthetic ladder (illustrative values, not market data)."""
    return load_ladder_csv(SAMPLE_LADDER)


# -- smoothed ladder calculus -------------------------------------------------

class _SmoothSide:
    """Monotone C1 interpolation of one side's marginal price through step midpoints."""

    def __init__(self, steps):
        caps = np.array([c for c, _ in steps])
        prices = np.array([p for _, p in steps])
        edges = np.concatenate([[0.0], np.cumsum(caps)])
        mids = 0.5 * (edges[:-1] + edges[1:])
        knots = np.concatenate([[0.0], mids, [edges[-1]]])
        values = np.concatenate([[prices[0]], prices, [prices[-1]]])
        self.capacity = edges[-1]
        self.p = PchipInterpolator(knots, values, extrapolate=False)
        self.dp = self.p.derivative()
        self.P = self.p.antiderivative()

    def average(self, y):
        return self.P(y) / y


@dataclass(frozen=True)
class DerivativeCheck:
    dR: float
    d2R: float
    marginal: float
    marginal_slope: float
    convexity_condition_holds: bool


def derivative_check(ladder: MeritLadder, x: float, h: float | None = None) -> DerivativeCheck:
    """Finite-difference slope and curvature of the smoothed average price.

    The ladder's marginal price is smoothed by monotone cubic interpolation
    through the step midpoints, so R is twice differentiable.  The returned
    flag evaluates ``p'(x) > 2 p(x) / x``: for x > 0 (with positive prices)
    it guarantees R'' > 0; for x < 0 (negative prices) it guarantees R'' < 0.
    """
    if x == 0:
        raise ConfigError("derivative_check is undefined at x = 0")
    if h is None:
        h = 1e-3 * (ladder.positive_capacity + ladder.negative_capacity)
    if not h > 0:
        raise ConfigError("finite-difference step must be > 0")
    steps = ladder.positive_steps if x > 0 else ladder.negative_steps
    if not steps:
        raise ReserveExhausted(x, 0.0)
    side = _SmoothSide(steps)
    y = abs(x)
    if y + h > side.capacity:
        raise ReserveExhausted(math.copysign(y + h, x), side.capacity)
    if y - h <= 0:
        raise ConfigError("finite-difference stencil crosses x = 0; reduce h")
    sgn = 1.0 if x > 0 else -1.0

    def R(v):
        # for x < 0, R(x) = average of p over [x, 0]
        return float(side.average(abs(v)))

    r_m, r_0, r_p = R(x - h), R(x), R(x + h)
    dR = (r_p - r_m) / (2 * h)
    d2R = (r_p - 2 * r_0 + r_m) / (h * h)
    p = float(side.p(y))
    dp = sgn * float(side.dp(y))
    return DerivativeCheck(dR, d2R, p, dp, bool(dp > 2 * p / x))


# -- broadening of a symmetric imbalance distribution -------------------------

_GAUSS_SPAN = 10.0


def _breakpoints(spec: PriceSpec, lo: float, hi: float, n_agents) -> list[float]:
    pts: list[float] = []
    inner = spec.inner if isinstance(spec, Cutoff) else spec
    if isinstance(inner, MeritOrder):
        pts.extend(inner.ladder.edges().tolist())
    if isinstance(spec, Cutoff):
        pts.append(0.0)
        level = spec.factor * spec.i_avg
        grid = np.linspace(lo, hi, 4001)
        vals = eval_price(inner, grid, n_agents)
        for target, side in ((level, grid > 0), (-level, grid < 0)):
            g = vals - target
            idx = np.flatnonzero(side[:-1] & side[1:] & (np.sign(g[:-1]) != np.sign(g[1:])))
            for k in idx:
                f = lambda v: eval_price(inner, v, n_agents) - target
                if g[k] == 0:
                    pts.append(float(grid[k]))
                else:
                    pts.append(optimize.brentq(f, grid[k], grid[k + 1], xtol=1e-14))
    return sorted(p for p in set(pts) if lo < p < hi)


def broadening_expectation(
    spec: PriceSpec,
    a_star: float,
    width_grid: Sequence[float],
    dist: str = "gaussian",
    n_agents: int | None = None,
) -> list[tuple[float, float]]:
    """Expected price <R(x)> for x distributed symmetrically around ``a_star``.

    ``width`` is the standard deviation of the distribution for both the
    gaussian and the uniform family.  Gaussian tails beyond 10 sigma are
    dropped (mass below 1e-22).
    """
    widths = [float(w) for w in width_grid]
    if any(w <= 0 for w in widths):
        raise ConfigError("widths must be positive")
    if any(b <= a for a, b in zip(widths, widths[1:])):
        raise ConfigError("widths must be increasing")
    if dist not in ("gaussian", "uniform"):
        raise ConfigError(f"unknown distribution {dist!r}")
    dlo, dhi = price_domain(spec)
    cp = compile_price(spec, n_agents)
    out = []
    for w in widths:
        half = _GAUSS_SPAN * w if dist == "gaussian" else math.sqrt(3.0) * w
        lo, hi = a_star - half, a_star + half
        if lo < dlo:
            raise ReserveExhausted(lo, -dlo)
        if hi > dhi:
            raise ReserveExhausted(hi, dhi)
        if dist == "gaussian":
            norm = 1.0 / (w * math.sqrt(2 * math.pi))
            dens = lambda v: norm * math.exp(-0.5 * ((v - a_star) / w) ** 2)
        else:
            dens = lambda v: 1.0 / (2 * half)
        f = lambda v: dens(v) * eval_price(cp, v)
        pts = _breakpoints(spec, lo, hi, n_agents)
        val, _ = integrate.quad(f, lo, hi, points=pts or None, limit=1000,
                                epsabs=0.0, epsrel=1e-11)
        out.append((w, val))
    return out


# -- flat key/value serialisation ---------------------------------------------

def _ladder_to_text(steps) -> str:
    return ";".join(f"{c!r}:{p!r}" for c, p in steps)


def _ladder_from_text(text: str):
    text = text.strip()
    if not text:
        return ()
    return tuple(tuple(float(v) for v in item.split(":")) for item in text.split(";"))


def price_to_flat(spec: PriceSpec, prefix: str = "price") -> dict[str, str]:
    if isinstance(spec, Identity):
        return {f"{prefix}.kind": "identity"}
    if isinstance(spec, ScaledLinear):
        d = {f"{prefix}.kind": "scaled_linear", f"{prefix}.c": repr(float(spec.c))}
        if spec.n is not None:
            d[f"{prefix}.n"] = str(spec.n)
        return d
    if isinstance(spec, Affine):
        return {f"{prefix}.kind": "affine", f"{prefix}.intraday": repr(float(spec.intraday)),
                f"{prefix}.c1": repr(float(spec.c1)), f"{prefix}.a_star": repr(float(spec.a_star))}
    if isinstance(spec, Quadratic):
        return {f"{prefix}.kind": "quadratic", f"{prefix}.c2": repr(float(spec.c2))}
    if isinstance(spec, MeritOrder):
        return {f"{prefix}.kind": "merit_order",
                f"{prefix}.positive": _ladder_to_text(spec.ladder.positive_steps),
                f"{prefix}.negative": _ladder_to_text(spec.ladder.negative_steps)}
    if isinstance(spec, Cutoff):
        d = {f"{prefix}.kind": "cutoff", f"{prefix}.i_avg": repr(float(spec.i_avg)),
             f"{prefix}.factor": repr(float(spec.factor))}
        d.update(price_to_flat(spec.inner, f"{prefix}.inner"))
        return d
    raise ConfigError(f"unknown price spec {spec!r}")


def price_from_flat(d: dict[str, str], prefix: str = "price", base_dir=None) -> PriceSpec:
    kind = d.get(f"{prefix}.kind", "identity").strip()
    g = lambda k: d[f"{prefix}.{k}"]
    try:
        if kind == "identity":
            return Identity()
        if kind == "scaled_linear":
            n = d.get(f"{prefix}.n")
            return ScaledLinear(float(d.get(f"{prefix}.c", "1")), int(n) if n else None)
        if kind == "affine":
            return Affine(float(g("intraday")), float(g("c1")), float(g("a_star")))
        if kind == "quadratic":
            return Quadratic(float(g("c2")))
        if kind == "merit_order":
            ref = d.get(f"{prefix}.ladder", "").strip()
            if ref.startswith("@"):
                p = Path(ref[1:])
                if base_dir is not None and not p.is_absolute():
                    p = Path(base_dir) / p
                return MeritOrder(load_ladder_csv(p))
            return MeritOrder(MeritLadder(_ladder_from_text(d.get(f"{prefix}.positive", "")),
                                          _ladder_from_text(d.get(f"{prefix}.negative", ""))))
        if kind == "cutoff":
            return Cutoff(price_from_flat(d, f"{prefix}.inner", base_dir),
                          float(g("i_avg")), float(d.get(f"{prefix}.factor", "1.25")))
    except KeyError as exc:
        raise ConfigError(f"missing price key {exc.args[0]}") from None
    raise ConfigError(f"unknown price kind {kind!r}")
