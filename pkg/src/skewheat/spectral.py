"""Eigenvalue combinatorics of the Ornstein-Uhlenbeck semigroup on path space.

The eigenvalues are Lambda_gamma = pi^2 w(gamma) with w(gamma) = sum_k gamma_k k^2
over finitely supported multi-indices gamma. Counting multi-indices of a given
weight is counting partitions into squares, whose generating function is the
Euler product prod_k 1 / (1 - r^{k^2}).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class ConsistencyError(RuntimeError):
    """The two independent counts disagree (a bug, never a data condition)."""


@dataclass(frozen=True, order=True)
class MultiIndex:
    """Sparse gamma: pairs (k, gamma_k) with gamma_k >= 1, sorted by k."""

    parts: tuple = ()

    def __post_init__(self):
        parts = tuple(sorted((int(k), int(g)) for k, g in self.parts if g))
        if any(k < 1 or g < 0 for k, g in parts):
            raise ValueError("multi-index needs k >= 1 and gamma_k >= 0")
        if len({k for k, _ in parts}) != len(parts):
            raise ValueError("repeated index in multi-index")
        object.__setattr__(self, "parts", parts)

    @property
    def weight(self) -> int:
        return sum(g * k * k for k, g in self.parts)

    @property
    def eigenvalue(self) -> float:
        return math.pi**2 * self.weight

    def __getitem__(self, k: int) -> int:
        return dict(self.parts).get(k, 0)


def enumerate_gamma(N: int) -> list[MultiIndex]:
    """All multi-indices with weight <= N, each once."""
    if N < 0:
        raise ValueError("weight cap must be >= 0")
    kmax = math.isqrt(N)
    out: list[MultiIndex] = []

    def rec(k: int, budget: int, acc: list):
        if k > kmax:
            out.append(MultiIndex(tuple(acc)))
            return
        sq = k * k
        for g in range(budget // sq + 1):
            if g:
                acc.append((k, g))
            rec(k + 1, budget - g * sq, acc)
            if g:
                acc.pop()

    rec(1, N, [])
    return out


def euler_product_coefficients(N: int) -> list[int]:
    """Integer coefficients of prod_{k^2 <= N} 1/(1 - r^{k^2}) up to degree N."""
    c = [0] * (N + 1)
    c[0] = 1
    for k in range(1, math.isqrt(N) + 1):
        sq = k * k
        # multiplying by 1/(1 - r^sq) is the prefix recurrence c[n] += c[n - sq]
        for n in range(sq, N + 1):
            c[n] += c[n - sq]
    return c


def _counts_by_enumeration(N: int) -> list[int]:
    c = [0] * (N + 1)
    for g in enumerate_gamma(N):
        c[g.weight] += 1
    return c


def _counts_by_recursion(N: int) -> list[int]:
    """Partitions of n into squares <= kmax^2, by recursion on the largest part."""

    @lru_cache(maxsize=None)
    def q(n: int, k: int) -> int:
        if n == 0:
            return 1
        if k == 0:
            return 0
        total = 0
        sq = k * k
        m = n
        while m >= 0:
            total += q(m, k - 1)
            m -= sq
        return total

    return [q(n, math.isqrt(n)) for n in range(N + 1)]


def partition_counts(N: int, enumeration_limit: int = 120) -> list[int]:
    """C_0..C_N, counted independently two ways and asserted equal.

    Up to ``enumeration_limit`` the first count lists every multi-index;
    beyond it (the list grows like exp(c N^(1/3))) a memoized recursion over
    the largest square part is used instead. The second count is always the
    Euler-product series.
    """
    if N < 0:
        raise ValueError("N must be >= 0")
    series = euler_product_coefficients(N)
    direct = _counts_by_enumeration(N) if N <= enumeration_limit else _counts_by_recursion(N)
    if direct != series:
        bad = next(i for i, (a, b) in enumerate(zip(direct, series)) if a != b)
        raise ConsistencyError(f"C_{bad}: enumeration {direct[bad]} != Euler product {series[bad]}")
    return series


@lru_cache(maxsize=None)
def _partition_numbers(N: int) -> tuple:
    p = [0] * (N + 1)
    p[0] = 1
    for part in range(1, N + 1):
        for n in range(part, N + 1):
            p[n] += p[n - part]
    return tuple(p)


@dataclass(frozen=True)
class HSTrace:
    t: float
    sum_side: float
    product_side: float
    sum_tail_bound: float
    product_tail_bound: float

    @property
    def rel_gap(self) -> float:
        return abs(self.sum_side - self.product_side) / self.product_side

    def to_json(self) -> dict:
        return {
            "t": self.t,
            "sum_side": self.sum_side,
            "product_side": self.product_side,
            "rel_gap": self.rel_gap,
            "sum_tail_bound": self.sum_tail_bound,
            "product_tail_bound": self.product_tail_bound,
        }


def hs_trace(t: float, K: int = 8, N: int = 400) -> HSTrace:
    """Truncations of sum_gamma e^{-2 Lambda_gamma t} and of prod_k 1/(1 - e^{-2 t pi^2 k^2}).

    Tail bounds, both absolute:

    * sum side: sum_{n > N} C_n q^n <= sum_{n > N} p(n) q^n with q = e^{-2 pi^2 t},
      p(n) exact up to 2N, then p(n) <= exp(pi sqrt(2n/3)) and a geometric majorant
    * product side: P_inf - P_K <= P_K (exp(sum_{k > K} q^{k^2} / (1 - q^{k^2})) - 1)
    """
    if not t > 0:
        raise ValueError(f"t must be > 0, got {t}")
    if K < 1 or N < 0:
        raise ValueError("need K >= 1 and N >= 0")
    lq = -2.0 * math.pi**2 * t
    C = partition_counts(N)
    n = np.arange(N + 1)
    s = float(np.sum(np.array(C, dtype=float) * np.exp(lq * n)))
    k = np.arange(1, K + 1)
    prod = float(np.prod(1.0 / -np.expm1(lq * k * k)))

    pn = _partition_numbers(2 * N + 2)
    m = np.arange(N + 1, 2 * N + 3)
    tail = float(np.sum(np.array(pn[N + 1:], dtype=float) * np.exp(lq * m)))
    # beyond 2N + 2: log p(n) <= pi sqrt(2n/3) is concave, so the terms are dominated by a
    # geometric series with the ratio at n0 = 2N + 3
    n0 = 2 * N + 3
    growth = math.pi * math.sqrt(2.0 / 3.0) / (2.0 * math.sqrt(n0))  # d/dn of the exponent
    ratio = math.exp(growth + lq)
    if ratio < 1:
        tail += math.exp(math.pi * math.sqrt(2.0 * n0 / 3.0) + lq * n0) / (1.0 - ratio)
    else:
        tail = math.inf
    kk = np.arange(K + 1, K + 200)
    qk = np.exp(lq * kk * kk)
    ptail = prod * math.expm1(float(np.sum(qk / (1.0 - qk))))
    return HSTrace(float(t), s, prod, tail, ptail)


@dataclass(frozen=True)
class DivergenceReport:
    partial_sums: np.ndarray      # S(N) = sum_{1 <= n <= N} C_n / n, index N - 1
    checkpoints: tuple
    gap_ratio: float
    log_slope: float

    def at(self, N: int) -> float:
        return float(self.partial_sums[N - 1])


def divergence_diagnostic(N: int, checkpoints: tuple = (100, 200, 400)) -> DivergenceReport:
    """Partial sums of C_n / n; a convergent (Hilbert-Schmidt) series would show decaying gaps."""
    if N < 1:
        raise ValueError("N must be >= 1")
    C = partition_counts(N)
    S = np.cumsum([C[n] / n for n in range(1, N + 1)])
    cps = tuple(c for c in checkpoints if c <= N)
    gap_ratio = math.nan
    slope = math.nan
    if len(cps) >= 3:
        a, b, c = (S[x - 1] for x in cps[:3])
        gap_ratio = float((c - b) / (b - a))
        slope = float(np.polyfit(np.log(cps), np.array([S[x - 1] for x in cps]), 1)[0])
    return DivergenceReport(S, cps, gap_ratio, slope)
