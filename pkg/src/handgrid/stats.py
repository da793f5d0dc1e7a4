"""Paired Wilcoxon signed-rank test, Bonferroni correction and box statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EXACT_MAX_N = 25


class UndefinedTestError(ValueError):
    pass


@dataclass(frozen=True)
class PairedSample:
    x: tuple
    y: tuple

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise ValueError(f"paired samples differ in length ({len(self.x)} vs {len(self.y)})")
        if len(self.x) < 1:
            raise ValueError("paired sample is empty")


@dataclass(frozen=True)
class TestResult:
    statistic: float
    w_plus: float
    w_minus: float
    p_value_two_sided: float
    p_value_adjusted: float
    n_effective: int
    method: str


def _midranks(a):
    """Ranks 1..n with ties replaced by their average rank."""
    order = np.argsort(a, kind="mergesort")
    ranks = np.empty(len(a))
    sa = a[order]
    i = 0
    while i < len(a):
        j = i
        while j + 1 < len(a) and sa[j + 1] == sa[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_cdf(ranks, w):
    """P(W+ <= w) under the null, over all 2^n sign assignments.

    Doubled ranks are integers even with mid-ranks, so the null distribution is
    built by a subset-sum count instead of literal enumeration.
    """
    doubled = np.rint(2.0 * ranks).astype(int)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled:
        counts[r:] = counts[r:] + counts[: total + 1 - r].copy()
    limit = int(math.floor(2.0 * w + 1e-9))
    return int(counts[: limit + 1].sum()) / 2 ** len(ranks)


def wilcoxon_signed_rank(sample, m=1):
    """Two-sided paired signed-rank test on ``x - y``; ``m`` is the Bonferroni count."""
    if not isinstance(sample, PairedSample):
        sample = PairedSample(*sample)
    d = np.asarray(sample.x, dtype=float) - np.asarray(sample.y, dtype=float)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise UndefinedTestError("all paired differences are zero; the signed-rank test is undefined")
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    if n <= EXACT_MAX_N:
        p = min(1.0, 2.0 * _exact_cdf(ranks, w))
        method = "exact"
    else:
        mean = n * (n + 1) / 4.0
        _, tie_counts = np.unique(np.abs(d), return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
        z = (abs(w - mean) - 0.5) / math.sqrt(var) if var > 0 else 0.0
        p = min(1.0, math.erfc(max(z, 0.0) / math.sqrt(2.0)))
        method = "normal-approximation"
    return TestResult(w, w_plus, w_minus, p, bonferroni([p], m)[0], n, method)


def bonferroni(p_values, m):
    if m < len(p_values):
        raise ValueError(f"comparison count m={m} is smaller than the number of p-values")
    return [min(1.0, m * float(p)) for p in p_values]


def summarize(counts):
    """Median, mean and quartiles (linear interpolation between order statistics)."""
    a = np.asarray(counts, dtype=float)
    if a.size == 0:
        raise ValueError("cannot summarize an empty sample")
    q1, med, q3 = np.percentile(a, [25, 50, 75], method="linear")
    return {
        "n": int(a.size),
        "mean": float(a.mean()),
        "median": float(med),
        "q1": float(q1),
        "q3": float(q3),
        "min": float(a.min()),
        "max": float(a.max()),
    }
