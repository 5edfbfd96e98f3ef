"""Quantized 16-bit CDF tables for the range coder.

A table covers a contiguous run of integer symbols starting at ``offset``,
flanked by two escape bins: index 0 means "below the run" and the last index
means "above the run". Escaped symbols are followed by a raw 32-bit value.

The Gaussian tables use the Abramowitz & Stegun 26.2.17 approximation of the
normal CDF (absolute error < 7.5e-8) rather than a library ``erf``, so the
tables depend only on IEEE arithmetic and ``exp``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

PRECISION = 16
TOTAL = 1 << PRECISION
SIGMA_MIN = 0.11
TAIL_SIGMAS = 6.0
MAX_SYMBOLS = 4096  # regular bins per table; wider supports are clipped

_AS_P = 0.2316419
_AS_B = (0.319381530, -0.356563782, 1.781477937, -1.821255978, 1.330274429)
_INV_SQRT_2PI = 0.3989422804014327


@dataclass(frozen=True)
class CdfTable:
    offset: int
    cdf: tuple

    def __post_init__(self):
        c = self.cdf
        if len(c) < 3 or c[0] != 0 or c[-1] != TOTAL:
            raise ValueError("CDF must start at 0 and end at 65536 with at least 2 bins")
        if np.any(np.diff(c) <= 0):
            raise ValueError("CDF must be strictly increasing")

    @property
    def bins(self) -> int:
        return len(self.cdf) - 1

    @property
    def symbols(self) -> int:
        """Regular (non-escape) symbols."""
        return len(self.cdf) - 3

    def freq(self, index: int) -> int:
        return self.cdf[index + 1] - self.cdf[index]

    def index_of(self, symbol: int) -> int:
        """Bin index coding ``symbol`` (0 / last for the escapes)."""
        k = symbol - self.offset
        if k < 0:
            return 0
        if k >= self.symbols:
            return self.bins - 1
        return k + 1

    def cost_bits(self, symbol: int) -> float:
        """Ideal code length of ``symbol`` under this table, escapes included."""
        idx = self.index_of(symbol)
        bits = PRECISION - math.log2(self.freq(idx))
        if idx == 0 or idx == self.bins - 1:
            bits += 32
        return bits


def upper_tail(x: np.ndarray) -> np.ndarray:
    """``1 - Phi(x)`` for ``x >= 0`` by A&S 26.2.17."""
    x = np.asarray(x, dtype=np.float64)
    t = 1.0 / (1.0 + _AS_P * x)
    poly = t * (_AS_B[0] + t * (_AS_B[1] + t * (_AS_B[2] + t * (_AS_B[3] + t * _AS_B[4]))))
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x) * poly


def normal_cdf(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    q = upper_tail(np.abs(x))
    return np.where(x >= 0, 1.0 - q, q)


def _bin_masses(edges: np.ndarray) -> np.ndarray:
    """Masses of the bins between consecutive standardized edges plus both tails.

    Each interval is evaluated on the tail that keeps precision, from a single
    evaluation of ``Q(|e|)`` per edge.
    """
    q = upper_tail(np.abs(edges))
    a, b = edges[:-1], edges[1:]
    qa, qb = q[:-1], q[1:]
    inner = np.where(a >= 0, qa - qb, np.where(b <= 0, qb - qa, 1.0 - qa - qb))
    low = q[0] if edges[0] < 0 else 1.0 - q[0]
    high = q[-1] if edges[-1] >= 0 else 1.0 - q[-1]
    return np.concatenate(([low], inner, [high]))


def quantize_pmf(masses, total: int = TOTAL) -> np.ndarray:
    """Integer frequencies summing to ``total`` with every bin at least 1.

    Largest-remainder rounding first; bins left at zero then borrow one count
    each from the currently largest bins, round-robin.
    """
    m = np.clip(np.asarray(masses, dtype=np.float64), 0.0, None)
    n = m.size
    if n < 2 or n > total:
        raise ValueError(f"cannot quantize {n} bins into {total}")
    s = m.sum()
    m = m / s if s > 0 else np.full(n, 1.0 / n)
    scaled = m * total
    freq = np.floor(scaled).astype(np.int64)
    short = total - int(freq.sum())
    if short > 0:
        order = np.argsort(-(scaled - freq), kind="stable")
        freq[order[:short]] += 1
    need = int(np.count_nonzero(freq == 0))
    freq[freq == 0] = 1
    while need > 0:
        order = np.argsort(-freq, kind="stable")
        donors = order[freq[order] > 1][:need]
        freq[donors] -= 1
        need -= donors.size
    return freq


def table_from_freqs(offset: int, freq: np.ndarray) -> CdfTable:
    cdf = np.concatenate([[0], np.cumsum(freq)])
    return CdfTable(int(offset), tuple(cdf.tolist()))


def gaussian_support(mu: float, sigma: float) -> tuple[int, int]:
    lo = math.floor(mu - TAIL_SIGMAS * sigma)
    hi = math.ceil(mu + TAIL_SIGMAS * sigma)
    if hi - lo + 1 > MAX_SYMBOLS:
        centre = math.floor(mu + 0.5)
        lo, hi = centre - MAX_SYMBOLS // 2, centre + MAX_SYMBOLS // 2 - 1
    return lo, hi


@lru_cache(maxsize=8192)
def build_cdf(mu: float, sigma: float) -> CdfTable:
    """Quantized table for a unit-width discretized Gaussian N(mu, sigma^2).

    Regular bins cover ``floor(mu - 6 sigma) .. ceil(mu + 6 sigma)``; the
    escape bins take the remaining tail mass on each side.
    """
    if not sigma >= SIGMA_MIN:
        raise ValueError(f"sigma {sigma} is below the minimum {SIGMA_MIN}")
    lo, hi = gaussian_support(mu, sigma)
    edges = (np.arange(lo, hi + 2, dtype=np.float64) - 0.5 - mu) / sigma
    masses = _bin_masses(edges)
    return table_from_freqs(lo, quantize_pmf(masses))


def table_from_cdf_fn(cdf_fn, lo: int, hi: int) -> CdfTable:
    """Table for symbols ``lo..hi`` of a distribution given by a vectorized CDF."""
    edges = np.arange(lo, hi + 2, dtype=np.float64) - 0.5
    c = np.asarray(cdf_fn(edges), dtype=np.float64)
    masses = np.empty(hi - lo + 3)
    masses[0] = c[0]
    masses[1:-1] = np.diff(c)
    masses[-1] = 1.0 - c[-1]
    return table_from_freqs(lo, quantize_pmf(masses))


def shannon_bits(symbols, tables) -> float:
    """Ideal code length of a symbol sequence under its quantized tables."""
    return float(sum(t.cost_bits(int(s)) for s, t in zip(symbols, tables)))
