"""Radius and avalanche numbers, their normalized quotients, toppling statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distributions import GammaSpec, expected_value, full_toppling_probability, pmf


@dataclass(frozen=True)
class QuotientPair:
    radius_quotient: float
    avalanche_quotient: float


@dataclass(frozen=True)
class TopplingStats:
    p_ft_theoretical: float
    nft_total: int
    nft_per_toppled_site: float


def radius_number(final) -> float:
    """Max Euclidean norm over sites holding at least one grain (0 if none)."""
    rows, cols = np.nonzero(final.grains > 0)
    if rows.size == 0:
        return 0.0
    xs = cols.astype(np.float64) + final.x0
    ys = rows.astype(np.float64) + final.y0
    return float(np.sqrt(xs * xs + ys * ys).max())


def avalanche_number(odometer) -> int:
    counts = np.asarray(odometer, dtype=np.int64)
    if (counts < 0).any():
        raise ValueError("odometer values must be non-negative")
    # object sum uses python ints, which never wrap
    total = int(counts.astype(object).sum()) if counts.size else 0
    if total >= 2**63:
        raise OverflowError("avalanche number exceeds 64-bit range")
    return total


def quotient_values(radius: float, avalanche: int, N: int, M: int, expected_gamma: float) -> QuotientPair:
    if N < 1 or M < 1:
        raise ValueError("N and M must be positive")
    return QuotientPair(
        radius_quotient=radius / math.sqrt(N / M),
        avalanche_quotient=avalanche * M * expected_gamma / (N * N),
    )


def quotients(result, N: int, M: int, spec: GammaSpec) -> QuotientPair:
    return quotient_values(result.radius, result.avalanche, N, M, expected_value(spec))


def toppling_stats(result, spec: GammaSpec) -> TopplingStats:
    if spec.constant_value is not None:
        p_ft = 1.0 if spec.constant_value == spec.M else 0.0
    elif spec.variant == "binomial":
        p_ft = full_toppling_probability(spec.M, spec.p)
    else:
        p_ft = pmf(spec, spec.M)
    sites = result.toppled_sites
    nft = int(result.nonfull_topplings)
    return TopplingStats(
        p_ft_theoretical=p_ft,
        nft_total=nft,
        nft_per_toppled_site=nft / sites if sites else 0.0,
    )
