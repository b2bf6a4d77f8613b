"""Correlation, reliability and two-condition tests.

p-values come from the regularised incomplete beta/gamma functions and erf,
so every test here reduces to a closed-form statistic plus one CDF call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np
from scipy import special

METHODS = ("pearson", "spearman", "welch-t", "student-t", "wilcoxon-exact", "wilcoxon-normal", "anova")
EXACT_MAX_N = 25


class StatsError(ValueError):
    pass


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str
    effect_size: float | None = None
    df: tuple[float, ...] = ()

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        if self.method not in METHODS:
            raise StatsError(f"unknown method {self.method!r}")
        if not 0.0 <= self.p_value <= 1.0:
            raise StatsError(f"p-value {self.p_value} outside [0, 1]")

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "p_value": self.p_value, "method": self.method,
                "effect_size": self.effect_size, "df": list(self.df)}


# -- special functions -----------------------------------------------------

def erf(x: float) -> float:
    if not math.isfinite(x):
        raise StatsError(f"erf argument {x} is not finite")
    return float(special.erf(x))


def betainc(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0 or not 0.0 <= x <= 1.0:
        raise StatsError(f"betainc domain error: a={a}, b={b}, x={x}")
    return float(special.betainc(a, b, x))


def gammainc(a: float, x: float) -> float:
    """Regularised lower incomplete gamma P(a, x)."""
    if a <= 0 or x < 0:
        raise StatsError(f"gammainc domain error: a={a}, x={x}")
    return float(special.gammainc(a, x))


def normal_sf2(z: float) -> float:
    """Two-sided normal tail probability P(|Z| >= |z|)."""
    return float(special.erfc(abs(z) / math.sqrt(2.0)))


def t_sf2(t: float, df: float) -> float:
    """Two-sided Student t tail probability."""
    if df <= 0:
        raise StatsError("t distribution needs df > 0")
    if not math.isfinite(t):
        return 0.0
    return min(1.0, betainc(df / 2.0, 0.5, df / (df + t * t)))


def f_sf(f: float, d1: float, d2: float) -> float:
    if f <= 0:
        return 1.0
    return min(1.0, betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)))


# -- helpers ----------------------------------------------------------------

def _vec(x, name: str, min_n: int = 2) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64).ravel()
    if a.size < min_n:
        raise StatsError(f"{name} needs at least {min_n} values, got {a.size}")
    if not np.all(np.isfinite(a)):
        raise StatsError(f"{name} contains non-finite values")
    return a


def rankdata(x) -> np.ndarray:
    """Ranks starting at 1, ties get the average rank."""
    a = np.asarray(x, dtype=np.float64)
    order = np.argsort(a, kind="mergesort")
    ranks = np.empty(a.size)
    sa = a[order]
    i = 0
    while i < a.size:
        j = i
        while j + 1 < a.size and sa[j + 1] == sa[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


# -- correlations -----------------------------------------------------------

def _corr(x: np.ndarray, y: np.ndarray) -> float:
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = dx @ dx, dy @ dy
    if sxx <= 0 or syy <= 0:
        raise StatsError("correlation undefined for a constant input")
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


def _corr_test(r: float, n: int, method: str) -> TestResult:
    df = n - 2
    if abs(r) >= 1.0:
        p = 0.0
    else:
        p = t_sf2(r * math.sqrt(df / (1.0 - r * r)), df)
    return TestResult(r, p, method, df=(float(df),))


def pearson(x, y) -> TestResult:
    x, y = _vec(x, "x", 3), _vec(y, "y", 3)
    if x.size != y.size:
        raise StatsError("x and y differ in length")
    return _corr_test(_corr(x, y), x.size, "pearson")


def spearman(x, y) -> TestResult:
    x, y = _vec(x, "x", 3), _vec(y, "y", 3)
    if x.size != y.size:
        raise StatsError("x and y differ in length")
    return _corr_test(_corr(rankdata(x), rankdata(y)), x.size, "spearman")


# -- reliability ------------------------------------------------------------

def _matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise StatsError("sample matrix must be 2-D")
    if a.shape[0] < 2 or a.shape[1] < 2:
        raise StatsError(f"sample matrix needs >= 2 rows and >= 2 columns, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise StatsError("sample matrix contains non-finite values")
    return a


def cronbach_alpha(m) -> float:
    """Columns are items (here: repeated trials), rows are observation units."""
    a = _matrix(m)
    k = a.shape[1]
    total_var = a.sum(axis=1).var(ddof=1)
    if total_var <= 0:
        raise StatsError("total score variance is zero")
    return float(k / (k - 1) * (1.0 - a.var(axis=0, ddof=1).sum() / total_var))


def test_retest(m) -> float:
    """Mean Pearson r over all column pairs."""
    a = _matrix(m)
    rs = [_corr(a[:, i], a[:, j]) for i, j in combinations(range(a.shape[1]), 2)]
    return float(np.mean(rs))


test_retest.__test__ = False


# -- two-condition tests ----------------------------------------------------

def welch_t(a, b) -> TestResult:
    a, b = _vec(a, "a"), _vec(b, "b")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    se2 = va + vb
    if se2 <= 0:
        raise StatsError("both groups have zero variance")
    t = (a.mean() - b.mean()) / math.sqrt(se2)
    df = se2 ** 2 / (va ** 2 / (a.size - 1) + vb ** 2 / (b.size - 1))
    return TestResult(float(t), t_sf2(t, df), "welch-t", df=(float(df),))


def student_t(a, b) -> TestResult:
    a, b = _vec(a, "a"), _vec(b, "b")
    df = a.size + b.size - 2
    sp2 = ((a.size - 1) * a.var(ddof=1) + (b.size - 1) * b.var(ddof=1)) / df
    if sp2 <= 0:
        raise StatsError("pooled variance is zero")
    t = (a.mean() - b.mean()) / math.sqrt(sp2 * (1 / a.size + 1 / b.size))
    return TestResult(float(t), t_sf2(t, df), "student-t", df=(float(df),))


def anova(*groups) -> TestResult:
    """One-way ANOVA F-test."""
    gs = [_vec(g, f"group {i}") for i, g in enumerate(groups)]
    if len(gs) < 2:
        raise StatsError("anova needs at least two groups")
    n = sum(g.size for g in gs)
    grand = np.concatenate(gs).mean()
    ssb = sum(g.size * (g.mean() - grand) ** 2 for g in gs)
    ssw = sum(((g - g.mean()) ** 2).sum() for g in gs)
    d1, d2 = len(gs) - 1, n - len(gs)
    if ssw <= 0:
        raise StatsError("within-group variance is zero")
    f = (ssb / d1) / (ssw / d2)
    return TestResult(float(f), f_sf(f, d1, d2), "anova", df=(float(d1), float(d2)))


def cohens_d(a, b) -> float:
    """(mean(a) - mean(b)) / pooled SD."""
    a, b = _vec(a, "a"), _vec(b, "b")
    diff = a.mean() - b.mean()
    sp2 = ((a.size - 1) * a.var(ddof=1) + (b.size - 1) * b.var(ddof=1)) / (a.size + b.size - 2)
    if sp2 <= 0:
        if diff == 0:
            return 0.0
        raise StatsError("pooled SD is zero")
    return float(diff / math.sqrt(sp2))


@lru_cache(maxsize=64)
def _signed_rank_counts(doubled: tuple[int, ...]) -> np.ndarray:
    """Number of sign assignments giving each doubled positive-rank sum."""
    counts = np.zeros(sum(doubled) + 1)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:-r]
        counts = counts + shifted
    return counts


def wilcoxon(a, b) -> TestResult:
    """Paired signed-rank test on ``a - b``; zero differences are dropped.

    Small samples use the exact permutation distribution of the (tie-averaged)
    ranks; larger ones the normal approximation with continuity and tie
    corrections.  The statistic is min(W+, W-).
    """
    a, b = _vec(a, "a"), _vec(b, "b")
    if a.size != b.size:
        raise StatsError("paired test needs equal-length samples")
    # snap float noise so differences equal in decimal tie and zero out exactly
    scale = max(float(np.abs(a).max()), float(np.abs(b).max()), 1.0)
    d = np.round((a - b) / scale, 12) * scale
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise StatsError("every paired difference is zero")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    if n <= EXACT_MAX_N:
        doubled = tuple(sorted(int(round(2 * r)) for r in ranks))
        counts = _signed_rank_counts(doubled)
        cdf = counts[: int(round(2 * w)) + 1].sum() / 2.0 ** n
        return TestResult(w, float(min(1.0, 2.0 * cdf)), "wilcoxon-exact")
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - (tie_counts ** 3 - tie_counts).sum() / 48.0
    z = (w - mean + 0.5) / math.sqrt(var) if w < mean else 0.0
    return TestResult(w, min(1.0, normal_sf2(z)), "wilcoxon-normal")


def condition_tests(a, b) -> dict[str, TestResult | float]:
    """Welch t, paired Wilcoxon, one-way ANOVA and Cohen's d for ``a`` vs ``b``.

    ``a`` is the context-dependent condition, so d > 0 means it scores higher.
    The Wilcoxon entry is None when the samples cannot be paired or every
    paired difference is zero.
    """
    d = cohens_d(a, b)
    t = welch_t(a, b)
    try:
        w = wilcoxon(a, b)
    except StatsError:
        w = None
    return {
        "t_test": TestResult(t.statistic, t.p_value, t.method, effect_size=d, df=t.df),
        "wilcoxon": w,
        "anova": anova(a, b),
        "cohens_d": d,
    }
