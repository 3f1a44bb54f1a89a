"""Correlation and paired-difference statistics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats


class ConstantInput(ValueError):
    pass


def _pair(xs, ys):
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be 1-D and of equal length")
    if len(x) < 2:
        raise ValueError("need at least two points")
    return x, y


def pearson(xs, ys) -> float:
    x, y = _pair(xs, ys)
    x = x - x.mean()
    y = y - y.mean()
    sx, sy = np.sqrt(x @ x), np.sqrt(y @ y)
    if sx == 0 or sy == 0:
        raise ConstantInput("correlation undefined for constant input")
    return float(np.clip((x @ y) / (sx * sy), -1.0, 1.0))


def spearman(xs, ys) -> float:
    """Pearson of average ranks."""
    x, y = _pair(xs, ys)
    return pearson(stats.rankdata(x), stats.rankdata(y))


@dataclass(frozen=True)
class PairedDelta:
    mean: float
    ci_low: float
    ci_high: float
    p_value: float
    n: int
    resamples: int

    def excludes_zero(self) -> bool:
        return self.ci_low > 0 or self.ci_high < 0

    def to_dict(self) -> dict:
        p = None if math.isnan(self.p_value) else self.p_value
        return {"mean": self.mean, "ci_low": self.ci_low, "ci_high": self.ci_high,
                "p_value": p, "n": self.n, "resamples": self.resamples}


def paired_delta(a, b, resamples: int = 1000, seed: int = 0, level: float = 0.95) -> PairedDelta:
    """Mean of a - b with a percentile-bootstrap CI and a two-sided paired t-test.

    The p-value is NaN when the differences are constant (up to rounding) or n < 2.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or len(a) == 0:
        raise ValueError("need two equal-length, nonempty 1-D samples")
    d = a - b
    n = len(d)
    if n < 2:
        warnings.warn("paired_delta with a single replication: the CI is degenerate", stacklevel=2)
    rng = np.random.default_rng(seed)
    boots = d[rng.integers(0, n, size=(resamples, n))].mean(axis=1)
    alpha = (1 - level) / 2
    lo, hi = np.quantile(boots, [alpha, 1 - alpha])
    mean = float(d.mean())
    # a + c - a is only constant up to rounding, so compare the spread to the mean
    constant = np.ptp(d) <= 1e-12 * max(1.0, abs(mean))
    if n < 2 or constant:
        p = float("nan")
    else:
        p = float(stats.ttest_rel(a, b).pvalue)
    if constant:
        lo = hi = mean
    return PairedDelta(mean, float(lo), float(hi), p, n, resamples)


def rank_distribution(utilities):
    """Rows (rank, index, utility) by descending utility, ties to the lower index.

    Returns (rows, fraction of negative utilities).
    """
    u = np.asarray(utilities, dtype=float)
    if u.size == 0:
        raise ValueError("rank_distribution needs at least one score")
    order = sorted(range(len(u)), key=lambda i: (-u[i], i))
    rows = [(r + 1, i, float(u[i])) for r, i in enumerate(order)]
    return rows, float(np.mean(u < 0))
