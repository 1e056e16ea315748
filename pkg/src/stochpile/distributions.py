"""Toppling-multiplicity laws on {1, ..., M} and their table samplers.

Each law is described by a :class:`GammaSpec`.  Probabilities are computed in
double precision; sampling goes through an alias table driven by a single
uniform 64-bit word, so a sample is a pure function of ``(table, word)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

VARIANTS = ("constant", "uniform", "binomial", "loglaw", "powerlaw")

GRAMMAR = (
    "constant:k | uniform | binomial:p | loglaw | powerlaw:s  "
    "(k integer in 1..M, p in (0,1], s > 0)"
)

_MASK64 = (1 << 64) - 1


class DistributionError(ValueError):
    """Invalid distribution parameters or out-of-range argument."""


@dataclass(frozen=True)
class GammaSpec:
    variant: str
    M: int
    k: int | None = None
    p: float | None = None
    s: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DistributionError(f"unknown distribution {self.variant!r}")
        if not isinstance(self.M, (int, np.integer)) or self.M < 1:
            raise DistributionError(f"M must be a positive integer, got {self.M!r}")
        if self.variant == "constant":
            if self.k is None or not 1 <= self.k <= self.M:
                raise DistributionError(f"constant:k needs 1 <= k <= M, got k={self.k}, M={self.M}")
        elif self.variant == "binomial":
            if self.p is None or not 0.0 < self.p <= 1.0:
                raise DistributionError(f"binomial p must lie in (0, 1], got {self.p!r}")
        elif self.variant == "powerlaw":
            if self.s is None or not self.s > 0.0:
                raise DistributionError(f"powerlaw s must be > 0, got {self.s!r}")

    @classmethod
    def parse(cls, text: str, M: int) -> GammaSpec:
        """Build a spec from its text form, e.g. ``binomial:0.5``."""
        name, _, arg = text.strip().lower().partition(":")
        try:
            if name == "constant":
                return cls("constant", M, k=int(arg))
            if name == "binomial":
                return cls("binomial", M, p=float(arg))
            if name == "powerlaw":
                return cls("powerlaw", M, s=float(arg))
        except ValueError as exc:
            if isinstance(exc, DistributionError):
                raise
            raise DistributionError(f"bad parameter in {text!r}; grammar: {GRAMMAR}") from None
        if name in ("uniform", "loglaw") and not arg:
            return cls(name, M)
        raise DistributionError(f"cannot parse distribution {text!r}; grammar: {GRAMMAR}")

    @property
    def text(self) -> str:
        if self.variant == "constant":
            return f"constant:{self.k}"
        if self.variant == "binomial":
            return f"binomial:{self.p!r}"
        if self.variant == "powerlaw":
            return f"powerlaw:{self.s!r}"
        return self.variant

    @property
    def constant_value(self) -> int | None:
        """The point mass location, if the law is degenerate (binomial p=1 included)."""
        if self.variant == "constant":
            return self.k
        if self.variant == "binomial" and self.p == 1.0:
            return self.M
        if self.M == 1:
            return 1
        return None

    def __str__(self):
        return self.text


def _binomial_pmf_vector(M: int, p: float) -> np.ndarray:
    # Unnormalised terms built outward from the mode; the ratio recurrence never
    # overflows because every step away from the mode shrinks the term.
    q = 1.0 - p
    odds = p / q
    mode = min(max(int((M + 1) * p), 1), M)
    w = np.zeros(M + 1)
    w[mode] = 1.0
    for k in range(mode, M):
        w[k + 1] = w[k] * (M - k) / (k + 1) * odds
    for k in range(mode, 1, -1):
        w[k - 1] = w[k] * k / (M - k + 1) / odds
    w[0] = 0.0
    return w[1:] / w[1:].sum()


def pmf_vector(spec: GammaSpec) -> np.ndarray:
    """P(gamma = k) for k = 1..M, as an array of length M."""
    M = spec.M
    c = spec.constant_value
    if c is not None:
        out = np.zeros(M)
        out[c - 1] = 1.0
        return out
    ks = np.arange(1, M + 1, dtype=float)
    if spec.variant == "uniform":
        return np.full(M, 1.0 / M)
    if spec.variant == "binomial":
        return _binomial_pmf_vector(M, spec.p)
    if spec.variant == "loglaw":
        return (np.log(ks + 1.0) - np.log(ks)) / math.log(M + 1)
    # powerlaw: partition function by direct summation
    w = ks ** (-spec.s)
    return w / w.sum()


def _check_k(spec: GammaSpec, k: int, lo: int):
    if not lo <= k <= spec.M:
        raise DistributionError(f"k={k} outside {lo}..{spec.M}")


def pmf(spec: GammaSpec, k: int) -> float:
    _check_k(spec, k, 1)
    c = spec.constant_value
    if c is not None:
        return 1.0 if k == c else 0.0
    M = spec.M
    if spec.variant == "uniform":
        return 1.0 / M
    if spec.variant == "loglaw":
        return (math.log(k + 1) - math.log(k)) / math.log(M + 1)
    if spec.variant == "binomial" and k == M:
        return full_toppling_probability(M, spec.p)
    return float(pmf_vector(spec)[k - 1])


def cdf(spec: GammaSpec, k: int) -> float:
    _check_k(spec, k, 0)
    if k == 0:
        return 0.0
    if k == spec.M:
        return 1.0
    if spec.variant == "loglaw":
        return math.log(k + 1) / math.log(spec.M + 1)
    return float(math.fsum(pmf_vector(spec)[:k]))


def full_toppling_probability(M: int, p: float) -> float:
    """Probability that a conditioned Binomial(M, p) draw equals M."""
    if not 0.0 < p <= 1.0:
        raise DistributionError(f"p must lie in (0, 1], got {p!r}")
    if M == 1 or p == 1.0:
        return 1.0
    q = 1.0 - p
    # 1 - q^M via expm1/log1p keeps precision when q^M is close to 1
    denom = -math.expm1(M * math.log(q))
    return math.exp(M * math.log(p)) / denom


def expected_value(spec: GammaSpec) -> float:
    M = spec.M
    c = spec.constant_value
    if c is not None:
        return float(c)
    if spec.variant == "uniform":
        return (M + 1) / 2
    if spec.variant == "binomial":
        q = 1.0 - spec.p
        return M * spec.p / -math.expm1(M * math.log(q))
    probs = pmf_vector(spec)
    return math.fsum(probs * np.arange(1, M + 1))


# --------------------------------------------------------------------------
# Alias sampler
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplerTable:
    """Alias table over buckets 0..M-1 (bucket j means value j+1).

    ``threshold[j]`` is the acceptance level for a 64-bit coin; a bucket with
    acceptance probability one is stored with ``alias[j] == j``.
    """

    spec: GammaSpec
    threshold: np.ndarray = field(repr=False)
    alias: np.ndarray = field(repr=False)

    @property
    def M(self) -> int:
        return self.spec.M


def build_sampler(spec: GammaSpec) -> SamplerTable:
    M = spec.M
    if spec.constant_value is not None:
        # point masses never consult the table
        empty = np.zeros(0, dtype=np.uint64), np.zeros(0, dtype=np.int64)
        return SamplerTable(spec, *empty)
    if M >= 2**32:
        raise DistributionError(f"random multiplicity laws need M < 2^32, got {M}")
    scaled = pmf_vector(spec) * M
    prob = np.ones(M)
    alias = np.arange(M, dtype=np.int64)
    small = [j for j in range(M) if scaled[j] < 1.0]
    large = [j for j in range(M) if scaled[j] >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        (small if scaled[g] < 1.0 else large).append(g)
    # leftovers are full buckets up to rounding
    for j in small + large:
        prob[j] = 1.0
        alias[j] = j
    threshold = np.empty(M, dtype=np.uint64)
    for j in range(M):
        if alias[j] == j:
            threshold[j] = np.uint64(_MASK64)
        else:
            threshold[j] = np.uint64(min(int(prob[j] * 2.0**64), _MASK64))
    threshold.setflags(write=False)
    alias.setflags(write=False)
    return SamplerTable(spec, threshold, alias)


@njit(cache=True, inline="always")
def draw(word, M, threshold, alias):
    """Map one uniform 64-bit word to a value in 1..M (Lemire multiply-high)."""
    m = np.uint64(M)
    lo = word & np.uint64(0xFFFFFFFF)
    hi = word >> np.uint64(32)
    t = lo * m
    bucket = (hi * m + (t >> np.uint64(32))) >> np.uint64(32)
    coin = word * m
    j = np.int64(bucket)
    a = alias[j]
    # select without a branch; the coin outcome is unpredictable
    accept = np.int64(coin < threshold[j])
    return a + 1 + accept * (j - a)


@njit(cache=True)
def _draw_many(words, M, threshold, alias):
    out = np.empty(words.shape[0], dtype=np.int64)
    for n in range(words.shape[0]):
        out[n] = draw(words[n], M, threshold, alias)
    return out


def sample_from_word(table: SamplerTable, word: int) -> int:
    if table.spec.constant_value is not None:
        return table.spec.constant_value
    word = int(word) & _MASK64
    M = table.M
    bucket = (word * M) >> 64
    coin = (word * M) & _MASK64
    if coin < int(table.threshold[bucket]):
        return bucket + 1
    return int(table.alias[bucket]) + 1


def sample_words(table: SamplerTable, words: np.ndarray) -> np.ndarray:
    """Vectorised :func:`sample_from_word` over a uint64 array."""
    words = np.ascontiguousarray(words, dtype=np.uint64)
    if table.spec.constant_value is not None:
        return np.full(words.shape[0], table.spec.constant_value, dtype=np.int64)
    return _draw_many(words, table.M, table.threshold, table.alias)
