"""Adjusted Rand Index and cluster-count reporting."""

from __future__ import annotations

from collections import Counter

import numpy as np

from .core import ValidationError

__all__ = ["ari", "cluster_count", "pair_counts"]


def _comb2(x: int) -> int:
    return x * (x - 1) // 2


def pair_counts(truth, est) -> tuple[int, int, int, int]:
    """Pair counts (A, B, C, D) via the contingency table, O(n + K1*K2).

    A: same/same, B: same in truth only, C: same in estimate only,
    D: different in both.  Exact integer arithmetic.
    """
    truth = list(truth)
    est = list(est)
    n = len(truth)
    table: Counter = Counter(zip(truth, est))
    row: Counter = Counter(truth)
    col: Counter = Counter(est)
    A = sum(_comb2(v) for v in table.values())
    same_truth = sum(_comb2(v) for v in row.values())
    same_est = sum(_comb2(v) for v in col.values())
    B = same_truth - A
    C = same_est - A
    D = _comb2(n) - A - B - C
    return A, B, C, D


def ari(truth, est) -> float:
    """Adjusted Rand Index between two label vectors.

    Computed from pair counts A, B, C, D as
    (C(n,2)(A+D) - [(A+B)(A+C) + (C+D)(B+D)]) /
    (C(n,2)^2    - [(A+B)(A+C) + (C+D)(B+D)]).

    When the denominator is zero (both partitions trivial) the convention
    is 1 if the two set partitions coincide and 0 otherwise.
    """
    truth = list(truth)
    est = list(est)
    if len(truth) != len(est):
        raise ValidationError(
            f"label vectors have different lengths ({len(truth)} vs "
            f"{len(est)})")
    n = len(truth)
    if n < 2:
        raise ValidationError("ARI requires at least two items")
    A, B, C, D = pair_counts(truth, est)
    total = _comb2(n)
    cross = (A + B) * (A + C) + (C + D) * (B + D)
    denom = total * total - cross
    if denom == 0:
        return 1.0 if (B == 0 and C == 0) else 0.0
    return (total * (A + D) - cross) / denom


def cluster_count(est) -> int:
    """Number of distinct labels."""
    est = list(est)
    if not est:
        raise ValidationError("empty label vector")
    return len(set(est))
