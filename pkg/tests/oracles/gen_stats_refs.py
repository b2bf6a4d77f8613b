"""Regenerate tests/data/stats_refs.json with mpmath at 50 digits.

Run from the repo root: python3 tests/oracles/gen_stats_refs.py
The package code is not imported; every reference is computed from the
textbook definitions directly.
"""

import itertools
import json
from pathlib import Path

import mpmath as mp
import numpy as np

mp.mp.dps = 50
OUT = Path(__file__).resolve().parents[1] / "data" / "stats_refs.json"


def fixtures():
    rng = np.random.default_rng(20240611)
    x = np.round(rng.normal(3.0, 1.0, 30), 2)
    y = np.round(0.6 * x + rng.normal(0.0, 0.8, 30), 2)
    a = np.round(rng.normal(60.0, 8.0, 14), 1)
    b = np.round(rng.normal(54.0, 13.0, 17), 1)
    pa = np.round(rng.normal(10.0, 2.0, 12), 1)
    pb = np.round(pa + rng.normal(0.7, 1.0, 12), 1)
    qa = np.round(rng.normal(0.0, 1.0, 40), 2)
    qb = np.round(qa + rng.normal(0.3, 1.0, 40), 2)
    trials = np.round(rng.normal(3.0, 1.0, (25, 1)) + rng.normal(0, 0.6, (25, 4)), 1)
    return {k: v.tolist() for k, v in dict(x=x, y=y, a=a, b=b, pa=pa, pb=pb, qa=qa, qb=qb, trials=trials).items()}


def mean(v):
    return mp.fsum(v) / len(v)


def var(v):
    m = mean(v)
    return mp.fsum((t - m) ** 2 for t in v) / (len(v) - 1)


def corr(x, y):
    mx, my = mean(x), mean(y)
    sxy = mp.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = mp.fsum((a - mx) ** 2 for a in x)
    syy = mp.fsum((b - my) ** 2 for b in y)
    return sxy / mp.sqrt(sxx * syy)


def t_p(t, df):
    return mp.betainc(df / 2, mp.mpf(1) / 2, 0, df / (df + t * t), regularized=True)


def corr_p(r, n):
    df = mp.mpf(n - 2)
    t = r * mp.sqrt(df / (1 - r * r))
    return t_p(t, df)


def ranks(v):
    s = sorted(v)
    return [mp.mpf(sum(i + 1 for i, w in enumerate(s) if w == u)) / s.count(u) for u in v]


def signed_rank_exact(d):
    d = [t for t in d if t != 0]
    r = ranks([abs(t) for t in d])
    wp = mp.fsum(rr for rr, t in zip(r, d) if t > 0)
    wm = mp.fsum(rr for rr, t in zip(r, d) if t < 0)
    w = min(wp, wm)
    hits = 0
    for signs in itertools.product((0, 1), repeat=len(d)):
        if mp.fsum(rr for rr, s in zip(r, signs) if s) <= w:
            hits += 1
    return w, min(mp.mpf(1), 2 * mp.mpf(hits) / 2 ** len(d))


def signed_rank_normal(d):
    d = [t for t in d if t != 0]
    n = len(d)
    r = ranks([abs(t) for t in d])
    wp = mp.fsum(rr for rr, t in zip(r, d) if t > 0)
    wm = mp.fsum(rr for rr, t in zip(r, d) if t < 0)
    w = min(wp, wm)
    ties = {}
    for rr in r:
        ties[rr] = ties.get(rr, 0) + 1
    sd = mp.sqrt(mp.mpf(n * (n + 1) * (2 * n + 1)) / 24 - mp.fsum(c ** 3 - c for c in ties.values()) / 48)
    z = (w - mp.mpf(n * (n + 1)) / 4 + mp.mpf(1) / 2) / sd
    return w, mp.erfc(abs(z) / mp.sqrt(2))


def main():
    f = fixtures()
    x, y = [mp.mpf(str(v)) for v in f["x"]], [mp.mpf(str(v)) for v in f["y"]]
    a, b = [mp.mpf(str(v)) for v in f["a"]], [mp.mpf(str(v)) for v in f["b"]]
    refs = {}

    r = corr(x, y)
    refs["pearson"] = {"r": r, "p": corr_p(r, len(x))}
    rs = corr(ranks(x), ranks(y))
    refs["spearman"] = {"r": rs, "p": corr_p(rs, len(x))}

    va, vb = var(a) / len(a), var(b) / len(b)
    t = (mean(a) - mean(b)) / mp.sqrt(va + vb)
    df = (va + vb) ** 2 / (va ** 2 / (len(a) - 1) + vb ** 2 / (len(b) - 1))
    refs["welch"] = {"t": t, "df": df, "p": t_p(t, df)}

    n1, n2 = len(a), len(b)
    grand = mean(a + b)
    ssb = n1 * (mean(a) - grand) ** 2 + n2 * (mean(b) - grand) ** 2
    ssw = var(a) * (n1 - 1) + var(b) * (n2 - 1)
    d2 = n1 + n2 - 2
    fstat = ssb / (ssw / d2)
    refs["anova"] = {"F": fstat, "p": mp.betainc(mp.mpf(d2) / 2, mp.mpf(1) / 2, 0, d2 / (d2 + fstat), regularized=True)}
    refs["cohens_d"] = (mean(a) - mean(b)) / mp.sqrt(ssw / d2)

    pa, pb = [mp.mpf(str(v)) for v in f["pa"]], [mp.mpf(str(v)) for v in f["pb"]]
    w, p = signed_rank_exact([u - v for u, v in zip(pa, pb)])
    refs["wilcoxon_exact"] = {"W": w, "p": p}
    qa, qb = [mp.mpf(str(v)) for v in f["qa"]], [mp.mpf(str(v)) for v in f["qb"]]
    w, p = signed_rank_normal([u - v for u, v in zip(qa, qb)])
    refs["wilcoxon_normal"] = {"W": w, "p": p}

    m = [[mp.mpf(str(v)) for v in row] for row in f["trials"]]
    k = len(m[0])
    cols = [[row[j] for row in m] for j in range(k)]
    totals = [mp.fsum(row) for row in m]
    refs["cronbach_alpha"] = mp.mpf(k) / (k - 1) * (1 - mp.fsum(var(c) for c in cols) / var(totals))
    pairs = list(itertools.combinations(range(k), 2))
    refs["test_retest"] = mp.fsum(corr(cols[i], cols[j]) for i, j in pairs) / len(pairs)

    special = []
    for v in ("-2.5", "-1", "-0.3", "0.05", "0.5", "0.9", "1.4", "2", "3", "4.2"):
        special.append({"fn": "erf", "args": [float(v)], "value": mp.erf(mp.mpf(v))})
    for aa, bb, xx in (("0.5", "0.5", "0.3"), ("1", "1", "0.42"), ("2", "3", "0.25"), ("5", "1.5", "0.8"),
                       ("10", "0.5", "0.95"), ("0.5", "14", "0.02"), ("7.5", "7.5", "0.5"), ("3", "12", "0.1"),
                       ("25", "2", "0.9"), ("1.5", "0.5", "0.66")):
        special.append({"fn": "betainc", "args": [float(aa), float(bb), float(xx)],
                        "value": mp.betainc(mp.mpf(aa), mp.mpf(bb), 0, mp.mpf(xx), regularized=True)})
    for aa, xx in (("0.5", "0.2"), ("1", "1"), ("2", "0.5"), ("3", "4"), ("5", "2.5"), ("10", "12"),
                   ("0.25", "0.01"), ("7", "20"), ("1.5", "3.3"), ("30", "25")):
        special.append({"fn": "gammainc", "args": [float(aa), float(xx)],
                        "value": mp.gammainc(mp.mpf(aa), 0, mp.mpf(xx), regularized=True)})

    def conv(o):
        if isinstance(o, dict):
            return {k: conv(v) for k, v in o.items()}
        if isinstance(o, list):
            return [conv(v) for v in o]
        if isinstance(o, mp.mpf):
            return mp.nstr(o, 25)
        return o

    doc = {"fixtures": f, "refs": conv(refs), "special": conv(special)}
    OUT.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
