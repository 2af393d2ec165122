"""Small statistical helpers shared by the experiments."""
from __future__ import annotations

import math

import numpy as np
from scipy import stats

Z_BAND = 3.0
ALPHA = 0.01


def mean_se(x) -> tuple:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return math.nan, math.nan
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.inf
    return float(x.mean()), se


def z_score(estimate: float, se: float, target: float) -> float:
    if se == 0.0:
        return 0.0 if estimate == target else math.copysign(math.inf, estimate - target)
    return (estimate - target) / se


def proportion_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n) if n else math.inf


def two_proportion_z(k1: int, n1: int, k2: int, n2: int) -> float:
    """Pooled two-sample z statistic for equal proportions."""
    if n1 == 0 or n2 == 0:
        return math.nan
    p = (k1 + k2) / (n1 + n2)
    se = math.sqrt(p * (1.0 - p) * (1.0 / n1 + 1.0 / n2))
    return z_score(k1 / n1 - k2 / n2, se, 0.0) if se > 0 else 0.0


def dispersion_test(counts) -> tuple:
    """Poisson index-of-dispersion statistic and its two-sided p-value."""
    c = np.asarray(counts, dtype=np.float64).reshape(-1)
    m = c.mean()
    if m == 0:
        return 0.0, 1.0
    d = float(((c - m) ** 2).sum() / m)
    dof = c.size - 1
    lo = stats.chi2.cdf(d, dof)
    return d, float(min(1.0, 2.0 * min(lo, 1.0 - lo)))


def uniformity_test(counts) -> tuple:
    """Chi-square goodness of fit of counts against equal cell probabilities."""
    c = np.asarray(counts, dtype=np.float64).reshape(-1)
    res = stats.chisquare(c)
    return float(res.statistic), float(res.pvalue)


def ks_two_sample(a, b) -> tuple:
    res = stats.ks_2samp(np.asarray(a), np.asarray(b))
    return float(res.statistic), float(res.pvalue)


def ks_one_sample(x, cdf) -> tuple:
    res = stats.kstest(np.asarray(x), cdf)
    return float(res.statistic), float(res.pvalue)


def bonferroni(alpha: float, m: int) -> float:
    return alpha / max(int(m), 1)
