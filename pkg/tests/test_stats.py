import json
from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cape import stats
from conftest import DATA

REF = json.loads((DATA / "stats_refs.json").read_text())
FX, R = REF["fixtures"], REF["refs"]


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


def test_pearson_trivial():
    assert stats.pearson([1, 2, 3], [2, 4, 6]).statistic == pytest.approx(1.0)
    assert stats.pearson([1, 2, 3], [-1, -2, -3]).statistic == pytest.approx(-1.0)
    with pytest.raises(stats.StatsError):
        stats.pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(stats.StatsError):
        stats.pearson([1, 2], [1, 2])


def test_pearson_spearman_vs_oracle():
    p = stats.pearson(FX["x"], FX["y"])
    assert p.statistic == pytest.approx(float(R["pearson"]["r"]), abs=1e-6)
    assert rel(p.p_value, float(R["pearson"]["p"])) < 1e-6
    s = stats.spearman(FX["x"], FX["y"])
    assert s.statistic == pytest.approx(float(R["spearman"]["r"]), abs=1e-6)
    assert rel(s.p_value, float(R["spearman"]["p"])) < 1e-6


def test_average_ranks():
    np.testing.assert_array_equal(stats.rankdata([1, 2, 2, 3]), [1, 2.5, 2.5, 4])


def test_spearman_monotone():
    x = np.linspace(0.1, 3, 12)
    assert stats.spearman(x, np.exp(x)).statistic == pytest.approx(1.0)


@given(st.lists(st.floats(-100, 100), min_size=3, max_size=30, unique=True),
       st.floats(0.01, 100), st.floats(-100, 100))
def test_pearson_affine(x, a, b):
    x = np.array(x)
    if np.ptp(x) < 1e-3:
        return
    assert stats.pearson(x, a * x + b).statistic == pytest.approx(1.0, abs=1e-12)


def test_welch_anova_d_vs_oracle():
    t = stats.welch_t(FX["a"], FX["b"])
    assert t.statistic == pytest.approx(float(R["welch"]["t"]), abs=1e-6)
    assert t.df[0] == pytest.approx(float(R["welch"]["df"]), abs=1e-6)
    assert rel(t.p_value, float(R["welch"]["p"])) < 1e-6
    f = stats.anova(FX["a"], FX["b"])
    assert f.statistic == pytest.approx(float(R["anova"]["F"]), abs=1e-6)
    assert rel(f.p_value, float(R["anova"]["p"])) < 1e-6
    assert stats.cohens_d(FX["a"], FX["b"]) == pytest.approx(float(R["cohens_d"]), abs=1e-9)


def test_wilcoxon_vs_oracle():
    w = stats.wilcoxon(FX["pa"], FX["pb"])
    assert w.method == "wilcoxon-exact"
    assert w.statistic == float(R["wilcoxon_exact"]["W"])
    assert rel(w.p_value, float(R["wilcoxon_exact"]["p"])) < 1e-9
    w = stats.wilcoxon(FX["qa"], FX["qb"])
    assert w.method == "wilcoxon-normal"
    assert w.statistic == float(R["wilcoxon_normal"]["W"])
    assert rel(w.p_value, float(R["wilcoxon_normal"]["p"])) < 1e-6


def test_wilcoxon_errors():
    with pytest.raises(stats.StatsError, match="zero"):
        stats.wilcoxon([1, 2, 3], [1, 2, 3])
    with pytest.raises(stats.StatsError):
        stats.wilcoxon([1, 2, 3], [1, 2])


def test_wilcoxon_branches_agree_at_25():
    rng = np.random.default_rng(11)
    for _ in range(20):
        a = rng.normal(size=25)
        b = a + rng.normal(0.2, 1.0, 25)
        exact = stats.wilcoxon(a, b)
        d = a - b
        ranks = stats.rankdata(np.abs(d))
        w = min(ranks[d > 0].sum(), ranks[d < 0].sum())
        n = 25
        z = (w - n * (n + 1) / 4 + 0.5) / np.sqrt(n * (n + 1) * (2 * n + 1) / 24)
        assert abs(exact.p_value - stats.normal_sf2(z)) < 0.01


def test_anova_is_t_squared():
    rng = np.random.default_rng(4)
    for _ in range(10):
        a, b = rng.normal(0, 1, 15), rng.normal(0.4, 1, 15)
        assert stats.anova(a, b).statistic == pytest.approx(stats.student_t(a, b).statistic ** 2, rel=1e-9, abs=1e-9)


def test_symmetric_p_values():
    a, b = FX["a"], FX["b"]
    t1, t2 = stats.welch_t(a, b), stats.welch_t(b, a)
    assert t1.statistic == pytest.approx(-t2.statistic)
    assert t1.p_value == pytest.approx(t2.p_value)


def test_condition_tests_equal_samples():
    res = stats.condition_tests([1.0, 2.0, 4.0], [1.0, 2.0, 4.0])
    assert res["cohens_d"] == 0.0
    assert res["wilcoxon"] is None
    assert res["t_test"].p_value == pytest.approx(1.0)


def test_condition_tests_sign():
    res = stats.condition_tests(FX["a"], FX["b"])
    assert res["cohens_d"] > 0 and res["t_test"].effect_size == res["cohens_d"]
    assert res["wilcoxon"] is None  # unequal lengths cannot be paired


def test_alpha_and_retest_vs_oracle():
    m = np.array(FX["trials"])
    assert stats.cronbach_alpha(m) == pytest.approx(float(R["cronbach_alpha"]), abs=1e-9)
    assert stats.test_retest(m) == pytest.approx(float(R["test_retest"]), abs=1e-6)


def test_alpha_textbook_fixture():
    m = [[3, 4, 3], [2, 2, 3], [5, 4, 4], [4, 5, 5], [1, 2, 1], [3, 3, 4]]
    k = 3
    cols = list(zip(*m))

    def var(v):
        mu = Fraction(sum(v), len(v))
        return sum((Fraction(x) - mu) ** 2 for x in v) / (len(v) - 1)

    want = Fraction(k, k - 1) * (1 - sum(var(c) for c in cols) / var([sum(r) for r in m]))
    assert stats.cronbach_alpha(m) == pytest.approx(float(want), abs=1e-9)


def test_alpha_identical_columns_and_shift_invariance():
    x = np.arange(10.0)
    assert stats.cronbach_alpha(np.column_stack([x, x, x])) == pytest.approx(1.0)
    m = np.random.default_rng(0).normal(size=(20, 4))
    shifted = m.copy()
    shifted[:, 2] += 7.5
    assert stats.cronbach_alpha(m) == pytest.approx(stats.cronbach_alpha(shifted), abs=1e-12)
    with pytest.raises(stats.StatsError):
        stats.cronbach_alpha(np.ones((5, 3)))


def test_alpha_independent_columns_near_zero():
    vals = [stats.cronbach_alpha(np.random.default_rng(s).normal(size=(1000, 3))) for s in range(20)]
    assert max(vals) < 0.2


def test_retest_trivial():
    x = np.arange(8.0)
    assert stats.test_retest(np.column_stack([x, x])) == pytest.approx(1.0)
    assert stats.test_retest(np.column_stack([x, 2 * x, x + 1])) == pytest.approx(1.0)


def test_special_functions_trivial():
    assert stats.erf(0.0) == 0.0
    assert stats.betainc(2.0, 3.0, 1.0) == 1.0
    with pytest.raises(stats.StatsError):
        stats.betainc(-1, 1, 0.5)
    with pytest.raises(stats.StatsError):
        stats.gammainc(1, -1)


@pytest.mark.parametrize("row", REF["special"], ids=lambda r: f"{r['fn']}{r['args']}")
def test_special_functions_vs_oracle(row):
    fn = getattr(stats, row["fn"])
    assert rel(fn(*row["args"]), float(row["value"])) < 1e-10


def test_p_values_in_unit_interval():
    rng = np.random.default_rng(8)
    for _ in range(30):
        a, b = rng.normal(size=8), rng.normal(size=8) * 3
        for res in (stats.welch_t(a, b), stats.anova(a, b), stats.wilcoxon(a, b), stats.pearson(a, b)):
            assert 0.0 <= res.p_value <= 1.0
