"""Series statistics: moments, histograms, sliding deviations, Gaussianity.

All variances use the population convention <x^2> - <x>^2.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Moments:
    """Mergeable central-moment accumulator (count, mean, M2, M3, M4)."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    m3: float = 0.0
    m4: float = 0.0

    @classmethod
    def of(cls, series) -> "Moments":
        x = np.asarray(series, dtype=float)
        n = x.size
        if n == 0:
            return cls()
        mu = float(x.mean())
        d = x - mu
        d2 = d * d
        return cls(n, mu, float(d2.sum()), float((d2 * d).sum()), float((d2 * d2).sum()))

    def merge(self, other: "Moments") -> "Moments":
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        na, nb = self.count, other.count
        n = na + nb
        delta = other.mean - self.mean
        d_n = delta / n
        mean = self.mean + nb * d_n
        m2 = self.m2 + other.m2 + delta * d_n * na * nb
        m3 = (self.m3 + other.m3 + delta * d_n * d_n * na * nb * (na - nb)
              + 3 * d_n * (na * other.m2 - nb * self.m2))
        m4 = (self.m4 + other.m4
              + delta * d_n ** 3 * na * nb * (na * na - na * nb + nb * nb)
              + 6 * d_n * d_n * (na * na * other.m2 + nb * nb * self.m2)
              + 4 * d_n * (na * other.m3 - nb * self.m3))
        return Moments(n, mean, m2, m3, m4)

    @property
    def variance(self) -> float:
        return self.m2 / self.count if self.count else math.nan

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    @property
    def excess_kurtosis(self) -> float:
        if self.count == 0 or self.m2 == 0:
            return math.nan
        return self.count * self.m4 / (self.m2 * self.m2) - 3.0


@dataclass(frozen=True)
class SeriesStats:
    mean: float
    variance: float
    std: float
    excess_kurtosis: float
    count: int

    @classmethod
    def of(cls, series) -> "SeriesStats":
        m = Moments.of(series)
        if m.count < 2:
            raise ValueError("need at least two samples")
        return cls(m.mean, m.variance, m.std, m.excess_kurtosis, m.count)


@dataclass(frozen=True)
class Histogram:
    bin_edges: tuple[float, ...]
    counts: tuple[int, ...]
    gaussian_overlay: tuple[float, float] | None = None

    def __post_init__(self):
        if len(self.bin_edges) != len(self.counts) + 1:
            raise ValueError("need one more edge than counts")
        if any(b <= a for a, b in zip(self.bin_edges, self.bin_edges[1:])):
            raise ValueError("bin edges must be strictly increasing")

    @classmethod
    def of(cls, series, bins="fd", overlay: bool = True) -> "Histogram":
        """Histogram with Freedman-Diaconis bins by default."""
        x = np.asarray(series, dtype=float)
        if x.size and x.min() == x.max():
            edges = np.array([x[0] - 0.5, x[0] + 0.5])
        else:
            edges = np.histogram_bin_edges(x, bins=bins)
            if len(edges) > 10_001:
                edges = np.histogram_bin_edges(x, bins=10_000)
        counts, edges = np.histogram(x, bins=edges)
        ov = (float(x.mean()), float(x.std())) if overlay and x.size else None
        return cls(tuple(float(e) for e in edges), tuple(int(c) for c in counts), ov)

    @property
    def total(self) -> int:
        return sum(self.counts)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bin_edges"] = list(self.bin_edges)
        d["counts"] = list(self.counts)
        d["gaussian_overlay"] = list(self.gaussian_overlay) if self.gaussian_overlay else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Histogram":
        ov = d.get("gaussian_overlay")
        return cls(tuple(d["bin_edges"]), tuple(int(c) for c in d["counts"]), tuple(ov) if ov else None)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Histogram":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        """Columns: bin_lo, bin_hi, count."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(self.bin_edges, self.bin_edges[1:], self.counts):
            w.writerow([repr(lo), repr(hi), c])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Histogram":
        rows = list(csv.DictReader(io.StringIO(text)))
        edges = [float(r["bin_lo"]) for r in rows] + [float(rows[-1]["bin_hi"])]
        return cls(tuple(edges), tuple(int(r["count"]) for r in rows))


def running_sigma(series, window: int) -> np.ndarray:
    """Population standard deviation over every complete sliding window."""
    x = np.asarray(series, dtype=float)
    if window < 2:
        raise ValueError("window must be >= 2")
    if x.size < window:
        log.warning("series of length %d shorter than window %d", x.size, window)
        return np.empty(0)
    # shift by the overall mean to limit cancellation in the running sums
    x = x - x.mean()
    c1 = np.concatenate([[0.0], np.cumsum(x)])
    c2 = np.concatenate([[0.0], np.cumsum(x * x)])
    s1 = c1[window:] - c1[:-window]
    s2 = c2[window:] - c2[:-window]
    var = s2 / window - (s1 / window) ** 2
    return np.sqrt(np.clip(var, 0.0, None))


@dataclass(frozen=True)
class VarianceDecomposition:
    sigma_A: float
    sigma_eta: float
    sigma_total: float
    additivity_residual: float
    relative_residual: float


def variance_decomposition(a_series, eta_series) -> VarianceDecomposition:
    """Residual sigma_total^2 - sigma_A^2 - sigma_eta^2, i.e. 2 cov(A, eta)."""
    a = np.asarray(a_series, dtype=float)
    e = np.asarray(eta_series, dtype=float)
    if a.shape != e.shape:
        raise ValueError("series lengths differ")
    va, ve, vt = a.var(), e.var(), (a + e).var()
    resid = vt - va - ve
    return VarianceDecomposition(
        float(np.sqrt(va)), float(np.sqrt(ve)), float(np.sqrt(vt)),
        float(resid), float(resid / vt) if vt > 0 else 0.0,
    )


@dataclass(frozen=True)
class Gaussianity:
    excess_kurtosis: float
    is_gaussian: bool
    threshold: float


def gaussianity(series, threshold: float = 0.2) -> Gaussianity:
    k = Moments.of(series).excess_kurtosis
    return Gaussianity(k, bool(abs(k) < threshold), threshold)


def rows_to_csv(rows: list[dict], columns: list[str] | None = None) -> str:
    """Render dict rows as CSV with fixed column order; floats via repr."""
    if columns is None:
        columns = list(rows[0]) if rows else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v
