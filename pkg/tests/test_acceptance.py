"""Acceptance criteria 1-10; each test records one PASS/FAIL line (see conftest)."""

import itertools
import json
import shutil
import time
from itertools import combinations
from pathlib import Path

import numpy as np

from conftest import DATA, make_toy, record
from cape import gp, metrics, stats
from cape.backend import ChatMessage, FunctionBackend, HistoryMajorityBackend, NoisyTableBackend
from cape.cli import main
from cape.inventory import PairFile, load_builtin
from cape.presets import expand_preset
from cape.prompt import ParsedChoice, default_variant
from cape.scoring import (
    diff_histogram, logical_consistency, ocean_score, pair_is_accurate, score_response, trajectory_from_transcript,
    ScoringTrajectory,
)
from cape.session import Resources, SessionConfig, run_batch, run_session


def _scored(trs, inv):
    trajs = [trajectory_from_transcript(t) for t in trs]
    return trajs, [ocean_score(t, inv) for t in trajs]


def test_criterion_01_degenerate_stability():
    gp._fit_cached.cache_clear()
    t0 = time.perf_counter()
    inv = load_builtin()
    results = {}
    for mode in ("context-free", "context-dependent"):
        base = SessionConfig(run_id=mode, backend="constant:A", history_mode=mode)
        trs = run_batch(expand_preset("stability", base).expansion)
        trajs, vecs = _scored(trs, inv)
        results[mode] = metrics.consistency_report(trajs, vecs, factor="stability")
    elapsed = time.perf_counter() - t0
    ok = all(r.tar == 100.0 and r.ed == 0.0 and r.tc >= 99.9 and r.oc >= 99.9 for r in results.values())
    detail = "; ".join(f"{m}: {r.tar:.2f}/{r.ed:.2f}/{r.tc:.2f}/{r.oc:.2f}" for m, r in results.items())
    record(1, "constant backend stability TAR/ED/TC/OC", ok and elapsed < 30, f"{detail}; {elapsed:.1f} s")


def _naive_tar(runs):
    m = len(runs[0])
    agree = 0
    for i in range(m):
        if all(r[i] == runs[0][i] for r in runs):
            agree += 1
    return 100.0 * agree / m


def _naive_ed(runs):
    total, pairs = 0, 0
    for a in range(len(runs)):
        for b in range(a + 1, len(runs)):
            pairs += 1
            for i in range(len(runs[a])):
                total += abs(runs[a][i] - runs[b][i])
    return total / (pairs * len(runs[0]))


def _brute_union(ivs):
    # sample-free: sweep the sorted endpoints and add covered elementary segments
    points = sorted({p for iv in ivs for p in iv})
    total = 0.0
    for a, b in zip(points, points[1:]):
        mid = 0.5 * (a + b)
        if any(lo <= mid <= hi for lo, hi in ivs):
            total += b - a
    return total


def test_criterion_02_metric_oracles():
    rng = np.random.default_rng(2)
    bad = 0
    for _ in range(1000):
        m = int(rng.integers(5, 130))
        runs = [list(rng.integers(1, 6, m)) for _ in range(3)]
        if metrics.tar(runs) != _naive_tar(runs) or metrics.ed(runs) != _naive_ed(runs):
            bad += 1
    worst = 0.0
    for _ in range(1000):
        k = int(rng.integers(1, 12))
        lo = rng.uniform(-10, 10, k)
        hi = lo + rng.exponential(2.0, k)
        ivs = list(zip(lo, hi))
        worst = max(worst, abs(metrics.union_width(ivs) - _brute_union(ivs)))
    record(2, "tar/ed exact vs naive loops; union_width vs brute force", bad == 0 and worst < 1e-9,
           f"tar/ed mismatches {bad}/1000, union max err {worst:.2e}")


def test_criterion_03_tc_affine_invariance():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        base = rng.integers(1, 6, 30).astype(float)
        triple = [base, np.clip(base + rng.integers(-1, 2, 30), 1, 5), rng.integers(1, 6, 30).astype(float)]
        ref = metrics.tc(triple)
        for a, b in itertools.product((0.5, 2.0, 10.0), (-3.0, 7.0)):
            moved = [triple[0], a * triple[1] + b, triple[2]]
            worst = max(worst, abs(metrics.tc(moved) - ref))
    record(3, "TC invariant under a*y+b on one trajectory", worst < 1e-6, f"max |dTC| {worst:.2e} over 600 cases")


def test_criterion_04_monotonicity():
    inv = load_builtin()
    res = {"tc": [], "tar": [], "ed": [], "p": []}
    for p in (0.0, 0.1, 0.3):
        for seed in range(20):
            base = SessionConfig(run_id=f"p{p}-s{seed}", backend=f"noisy:p={p},seed={seed}")
            trs = run_batch(expand_preset("stability", base).expansion, master_seed=seed)
            trajs = [trajectory_from_transcript(t) for t in trs]
            res["tc"].append(metrics.tc(trajs))
            res["tar"].append(metrics.tar(trajs))
            res["ed"].append(metrics.ed(trajs))
            res["p"].append(p)
    p_arr = np.array(res["p"])
    mean = lambda key, p: float(np.mean(np.array(res[key])[p_arr == p]))
    tcs = [mean("tc", p) for p in (0.0, 0.1, 0.3)]
    tars = [mean("tar", p) for p in (0.0, 0.1, 0.3)]
    r_tar = stats.spearman(res["tc"], res["tar"])
    r_ed = stats.spearman(res["tc"], res["ed"])
    ok = (tcs[0] > tcs[1] > tcs[2] and tars[0] > tars[1] > tars[2]
          and r_tar.statistic > 0 and r_tar.p_value < 0.01 and r_ed.statistic < 0 and r_ed.p_value < 0.01)
    detail = (f"mean TC {tcs[0]:.1f}>{tcs[1]:.1f}>{tcs[2]:.1f}, mean TAR {tars[0]:.1f}>{tars[1]:.1f}>{tars[2]:.1f}, "
              f"rho(TC,TAR)={r_tar.statistic:.3f} p={r_tar.p_value:.1e}, rho(TC,ED)={r_ed.statistic:.3f} p={r_ed.p_value:.1e}")
    record(4, "TC/TAR fall with flip probability; signed rank correlations", ok, detail)


def test_criterion_05_oc_structure():
    rng = np.random.default_rng(5)
    lengths_ok = all(metrics.permutation_series(rng.uniform(1, 5, 5)).size == 600 for _ in range(10))
    vectors = [rng.uniform(1, 5, 5) for _ in range(2)]
    relabel = [3, 0, 4, 1, 2]
    oc = metrics.oc(vectors)
    oc_relabel = metrics.oc([v[relabel] for v in vectors])
    same = metrics.oc([vectors[0], vectors[0].copy()])
    ok = lengths_ok and oc == oc_relabel and same >= 99.9
    record(5, "OC series length 600, relabel invariance, identical vectors", ok,
           f"OC {oc:.4f} vs relabelled {oc_relabel:.4f}; identical {same:.2f}")


def test_criterion_06_gpr_quality():
    grid = np.linspace(gp.LOG_BOUNDS[:, 0], gp.LOG_BOUNDS[:, 1], 20)
    worst = np.inf
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        n = int(rng.integers(15, 40))
        xs = np.arange(1.0, n + 1)
        ys = gp.normalize(np.sin(xs / rng.uniform(1, 6)) + rng.normal(0, rng.uniform(0.05, 0.8), n))[0]
        params, lml = gp.optimize_hyperparameters(xs, ys)
        best_grid = max(
            gp.log_marginal_likelihood(np.array([a, b, c]), xs, ys)
            for a in grid[:, 0] for b in grid[:, 1] for c in grid[:, 2]
        )
        worst = min(worst, lml - best_grid)
    xs = np.linspace(0, 10, 50)
    ys = np.sin(xs)
    post = gp.fit_gpr(xs, ys)
    rmse = float(np.sqrt(np.mean((post.mean - ys) ** 2)))
    record(6, "GP LML >= 20^3 grid best - 1e-3; sinusoid RMSE < 0.05", worst >= -1e-3 and rmse < 0.05,
           f"min(LML - grid) {worst:.2e}, RMSE {rmse:.2e}")


def test_criterion_07_stats_oracles():
    ref = json.loads((DATA / "stats_refs.json").read_text())
    fx, r = ref["fixtures"], ref["refs"]
    rel = lambda a, b: abs(a - float(b)) / max(abs(float(b)), 1e-300)
    errs = {}
    pe, sp = stats.pearson(fx["x"], fx["y"]), stats.spearman(fx["x"], fx["y"])
    errs["pearson"] = max(abs(pe.statistic - float(r["pearson"]["r"])), rel(pe.p_value, r["pearson"]["p"]))
    errs["spearman"] = max(abs(sp.statistic - float(r["spearman"]["r"])), rel(sp.p_value, r["spearman"]["p"]))
    t = stats.welch_t(fx["a"], fx["b"])
    errs["welch"] = max(abs(t.statistic - float(r["welch"]["t"])), rel(t.p_value, r["welch"]["p"]))
    f = stats.anova(fx["a"], fx["b"])
    errs["anova"] = max(abs(f.statistic - float(r["anova"]["F"])), rel(f.p_value, r["anova"]["p"]))
    w = stats.wilcoxon(fx["pa"], fx["pb"])
    errs["wilcoxon_exact"] = max(abs(w.statistic - float(r["wilcoxon_exact"]["W"])), rel(w.p_value, r["wilcoxon_exact"]["p"]))
    w = stats.wilcoxon(fx["qa"], fx["qb"])
    errs["wilcoxon_normal"] = max(abs(w.statistic - float(r["wilcoxon_normal"]["W"])), rel(w.p_value, r["wilcoxon_normal"]["p"]))
    errs["alpha"] = abs(stats.cronbach_alpha(np.array(fx["trials"])) - float(r["cronbach_alpha"]))
    rng = np.random.default_rng(7)
    identity = 0.0
    for _ in range(20):
        a, b = rng.normal(0, 1, 12), rng.normal(0.5, 1, 12)
        identity = max(identity, abs(stats.anova(a, b).statistic - stats.student_t(a, b).statistic ** 2))
    special = max(rel(getattr(stats, row["fn"])(*row["args"]), row["value"]) for row in ref["special"])
    ok = max(errs.values()) < 1e-6 and identity < 1e-9 and special < 1e-10
    worst = max(errs, key=errs.get)
    record(7, "stats vs mpmath oracles; F = t^2; special functions", ok,
           f"worst test err {errs[worst]:.1e} ({worst}), F-t^2 {identity:.1e}, special rel {special:.1e}")


def test_criterion_08_session_structure():
    inv = load_builtin()
    variant = default_variant()
    sent = []

    def capture(msgs, params):
        sent.append(list(msgs))
        return "E"

    persona = "You are a careful respondent."
    cfg = SessionConfig(run_id="cd", history_mode="context-dependent", persona=persona)
    run_session(cfg, Resources(inv, variant, FunctionBackend(capture)))
    cd_ok = all(len(m) == 2 * (t - 1) + 1 + 1 for t, m in enumerate(sent, 1))

    sent.clear()
    cfg = SessionConfig(run_id="fs", history_mode="few-shot", fewshot_k=5)
    run_session(cfg, Resources(inv, variant, FunctionBackend(capture)))
    fs_ok = all(sum(x.role == "assistant" for x in m) == min(5, t - 1) for t, m in enumerate(sent, 1))

    sent.clear()
    cfg = SessionConfig(run_id="adv", history_mode="context-dependent", adversarial=2)
    tr = run_session(cfg, Resources(inv, variant, FunctionBackend(capture)))
    forced = variant.option_text(2)
    adv_ok = all(x.content == forced for m in sent for x in m if x.role == "assistant")
    adv_ok = adv_ok and all(e.raw_reply == "E" for e in tr.entries)

    tr = run_session(cfg, Resources(inv, variant, HistoryMajorityBackend("A")))
    later = [e.semantic_index for e in tr.entries[10:]]
    share_c = later.count(2) / len(later)
    ok = cd_ok and fs_ok and adv_ok and share_c >= 0.9
    record(8, "history sizes, few-shot window, adversarial rewrite, forced-C shift", ok,
           f"context-dependent {cd_ok}, few-shot {fs_ok}, stored replies intact {adv_ok}, C share after item 10 {share_c:.2f}")


def test_criterion_09_scoring_truth_tables():
    toy = make_toy()
    plus = next(it for it in toy.items if it.key == 1)
    minus = next(it for it in toy.items if it.key == -1)
    expected = {(1, i): 5 - i for i in range(5)} | {(-1, i): 1 + i for i in range(5)}
    keying = all(
        score_response(item, ParsedChoice(i, "ABCDE"[i], "")) == expected[(item.key, i)]
        for item in (plus, minus) for i in range(5)
    )
    side = lambda s: s > 2.5
    pairs_ok = all(
        pair_is_accurate("semantically-similar", a, b) == (side(a) == side(b))
        and pair_is_accurate("logically-inconsistent", a, b) == (side(a) != side(b))
        for a in range(1, 6) for b in range(1, 6)
    )
    ids = tuple(f"i{n}" for n in range(1, 26))
    scores = [a for a in range(1, 6) for b in range(1, 6)]
    partner = [b for a in range(1, 6) for b in range(1, 6)]
    traj = ScoringTrajectory("t", tuple(scores + partner), ids + tuple(f"j{n}" for n in range(1, 26)))
    sim = PairFile("semantically-similar", tuple((f"i{n}", f"j{n}") for n in range(1, 26)))
    acc = logical_consistency(sim, traj)["semantically-similar"]
    pairs_ok = pairs_ok and acc == 13 / 25  # (1,2)x(1,2) + (3..5)x(3..5)
    rng = np.random.default_rng(9)
    hist_ok = True
    for _ in range(50):
        free = rng.integers(1, 6, 120)
        shift = rng.integers(-4, 5, 120)
        dep = np.clip(free + shift, 1, 5)
        h = diff_histogram(ScoringTrajectory("d", tuple(int(x) for x in dep), tuple(map(str, range(120)))),
                           ScoringTrajectory("f", tuple(int(x) for x in free), tuple(map(str, range(120)))))
        want = {k: int(np.sum(dep - free == k)) for k in range(-4, 5)}
        hist_ok = hist_ok and h == want and sum(h.values()) == 120
    record(9, "keying, pair-kind truth tables, diff histograms", keying and pairs_ok and hist_ok,
           f"keying {keying}, pairs {pairs_ok}, histograms {hist_ok}")


def test_criterion_10_replay_reproducibility(tmp_path, monkeypatch):
    fixture = DATA / "replay"
    monkeypatch.chdir(fixture)
    out = tmp_path / "replayed"
    run = ["--run-id", "replay", "--seed", "1", "--mode", "context-free", "--deterministic"]
    assert main(["run", "--backend", "replay:cassette.jsonl", *run, "--out", str(out)]) == 0
    tr = str(out / "transcripts" / "replay.jsonl")
    assert main(["score", "--transcripts", tr, "--out", str(out), "--deterministic"]) == 0
    assert main(["pairs", "--transcripts", tr, "--out", str(out), "--deterministic"]) == 0
    assert main(["plot", "--kind", "option-area", "--transcripts", tr, "--out", str(out), "--deterministic"]) == 0
    produced = {
        "replay.jsonl": out / "transcripts" / "replay.jsonl",
        "scores.csv": out / "scores.csv",
        "trajectories.csv": out / "trajectories.csv",
        "options.csv": out / "options.csv",
        "logical_consistency.csv": out / "logical_consistency.csv",
        "option-area.csv": out / "plots" / "option-area.csv",
    }
    diffs = [n for n, p in produced.items() if p.read_bytes() != (fixture / "expected" / n).read_bytes()]
    n_entries = len((fixture / "expected" / "replay.jsonl").read_text().splitlines()) - 1
    record(10, "checked-in cassette replays to byte-identical transcript and CSVs", not diffs and n_entries == 120,
           f"{len(produced) - len(diffs)}/{len(produced)} files identical, {n_entries} items")
