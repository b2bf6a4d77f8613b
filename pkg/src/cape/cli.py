"""``cape`` command line: run sessions, score, compute metrics, stats and plots.

Every flag can take its default from an INI file passed with ``--config``.
Keys in ``[cape]`` apply to all subcommands; a section named after a
subcommand (``[run]``, ``[metrics]`` ...) applies to that one only.  Keys are
flag names with or without leading dashes, e.g. ``backend = noisy:p=0.1``.
Command-line flags override the file.
"""

from __future__ import annotations

import argparse
import configparser
import glob
import json
import logging
import sys
from collections import defaultdict
from itertools import combinations
from pathlib import Path

import numpy as np

from . import __version__, metrics, scoring, stats
from .backend import BackendError, GenerationParams, RecordingBackend, load_providers, make_backend, parse_backend_spec
from .inventory import TRAITS, builtin_path, load_pairs, resolve_inventory
from .presets import PRESET_VERSION, PRESETS, expand_preset
from .prompt import load_variants
from .report import PlotSpec, emit_plot, write_csv, write_json, write_manifest
from .session import HISTORY_MODES, ORDERINGS, SessionConfig, load_transcript, run_batch

log = logging.getLogger("cape")

METRIC_NAMES = ("tar", "ed", "tc", "oc")
DEFAULT_PAIRS = ("mpi_120_similar_pairs.json", "mpi_120_inconsistent_pairs.json")


class CliError(RuntimeError):
    pass


# -- argument parsing -------------------------------------------------------

def _session_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--inventory", default="mpi-120", help="inventory file or bundled name (mpi-120)")
    p.add_argument("--backend", default="constant:A", help="backend spec, e.g. noisy:p=0.1,seed=3 or replay:FILE")
    p.add_argument("--providers", help="provider config JSON for http backends")
    p.add_argument("--variant", default="default")
    p.add_argument("--variants-file", help="variant bundle JSON (default: bundled)")
    p.add_argument("--mode", choices=HISTORY_MODES, default="context-free")
    p.add_argument("--fewshot", type=int, help="window size k for --mode few-shot")
    p.add_argument("--ordering", choices=ORDERINGS, default="canonical")
    p.add_argument("--seed", type=int, default=0, help="master seed for orderings and per-run seeds")
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--max-tokens", type=int, default=16)
    p.add_argument("--persona", help="system prompt text, or @FILE to read it")
    p.add_argument("--paraphrases", help="paraphrase sidecar JSON")
    p.add_argument("--paraphrase-version", type=int, default=0)
    p.add_argument("--factor", choices=PRESETS, help="expand an experiment preset")
    p.add_argument("--runs", type=int, help="runs per config (stability: total runs, default 3)")
    p.add_argument("--run-id", default=None, help="run id prefix (default: preset name or 'run')")
    p.add_argument("--record", help="append every chat exchange to this cassette")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="out")
    p.add_argument("--deterministic", action="store_true", help="omit timestamps from all artifacts")


def _transcript_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--transcripts", nargs="+", required=required, help="transcript files, dirs or globs")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cape", description="Consistency assessment of questionnaire runs.")
    ap.add_argument("--version", action="version", version=f"cape {__version__}")
    ap.add_argument("--config", help="INI file with flag defaults")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run questionnaire sessions")
    _session_args(p)

    p = sub.add_parser("attack", help="adversarial history injection (baseline + forced runs)")
    _session_args(p)
    p.add_argument("--force-option", default="C", help="option letter or semantic index to inject")

    p = sub.add_parser("ablate", help="few-shot history window ablation")
    _session_args(p)
    p.add_argument("--fewshot-k", type=int, nargs="+", default=[1, 5, 10], dest="fewshot_ks")

    p = sub.add_parser("score", help="OCEAN scores, trajectories and option counts")
    _transcript_args(p)
    p.add_argument("--inventory", help="override the inventory named in the transcripts")
    p.add_argument("--out", default="out")
    p.add_argument("--deterministic", action="store_true")

    p = sub.add_parser("metrics", help="TAR/ED/TC/OC per factor group")
    _transcript_args(p)
    p.add_argument("--factor", help="label every transcript with this factor")
    p.add_argument("--inventory", help="override the inventory named in the transcripts")
    p.add_argument("--out", default="out")
    p.add_argument("--deterministic", action="store_true")

    p = sub.add_parser("stats", help="correlations, reliability and condition tests over reports")
    p.add_argument("--reports", nargs="+", required=True, help="report JSON files, dirs or globs")
    p.add_argument("--out", default="stats.json", help="output JSON path")
    p.add_argument("--deterministic", action="store_true")

    p = sub.add_parser("plot", help="CSV + SVG data for figures")
    p.add_argument("--kind", required=True, choices=("trajectory-lines", "ocean-bars", "diff-distribution", "option-area"))
    _transcript_args(p, required=False)
    p.add_argument("--dependent", help="context-dependent transcript (diff-distribution)")
    p.add_argument("--free", help="context-free transcript (diff-distribution)")
    p.add_argument("--realign", action="store_true", help="match diff runs by item id")
    p.add_argument("--smooth", action="store_true", help="quadratic-spline smoothing for option-area")
    p.add_argument("--inventory", help="override the inventory named in the transcripts")
    p.add_argument("--out", default="out")
    p.add_argument("--deterministic", action="store_true")

    p = sub.add_parser("align", help="OCEAN alignment (OA) and MAE against human scores")
    p.add_argument("--human", required=True, help='JSON {"scores": {"O": ..}, "scale": [lo, hi]}')
    _transcript_args(p, required=False)
    p.add_argument("--model", help="model trait vector JSON instead of transcripts")
    p.add_argument("--mask", nargs="*", default=[], choices=TRAITS, help="traits to leave out")
    p.add_argument("--rescale", action="store_true", help="map human scores onto the model scale")
    p.add_argument("--inventory", help="override the inventory named in the transcripts")
    p.add_argument("--out", default="out")
    p.add_argument("--deterministic", action="store_true")

    p = sub.add_parser("pairs", help="logical consistency over item-pair files")
    _transcript_args(p)
    p.add_argument("--pairs", nargs="+", help="pair files (default: bundled MPI-120 pairs)")
    p.add_argument("--inventory", help="override the inventory named in the transcripts")
    p.add_argument("--out", default="out")
    p.add_argument("--deterministic", action="store_true")
    return ap


def _apply_config(ap: argparse.ArgumentParser, path: str) -> None:
    cp = configparser.ConfigParser()
    if not cp.read(path, encoding="utf-8"):
        raise CliError(f"config file {path} not found")
    subs = next(a for a in ap._actions if isinstance(a, argparse._SubParsersAction))
    for name, sp in subs.choices.items():
        values = {}
        for section in ("cape", name):
            if cp.has_section(section):
                values.update({k.lstrip("-").replace("-", "_"): v for k, v in cp.items(section)})
        defaults = {}
        for action in sp._actions:
            if action.dest not in values:
                continue
            raw = values[action.dest]
            if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                defaults[action.dest] = cp.BOOLEAN_STATES.get(raw.lower())
                if defaults[action.dest] is None:
                    raise CliError(f"config {path}: {action.dest} expects a boolean, got {raw!r}")
            elif action.nargs in ("+", "*"):
                items = raw.split()
                defaults[action.dest] = [action.type(x) if action.type else x for x in items]
                action.required = False
            else:
                defaults[action.dest] = raw  # argparse applies type= to string defaults
                action.required = False
        sp.set_defaults(**defaults)


# -- helpers ----------------------------------------------------------------

def _expand(patterns, suffix: str) -> list[Path]:
    out = []
    for pat in patterns:
        p = Path(pat)
        if p.is_dir():
            out += sorted(p.rglob(f"*{suffix}"))
        elif any(ch in pat for ch in "*?["):
            out += sorted(Path(x) for x in glob.glob(pat, recursive=True))
        elif p.exists():
            out.append(p)
        else:
            raise CliError(f"{pat}: no such file")
    seen, uniq = set(), []
    for p in out:
        if p.resolve() not in seen and p.name != "manifest.json":
            seen.add(p.resolve())
            uniq.append(p)
    if not uniq:
        raise CliError(f"no inputs matched {list(patterns)}")
    return uniq


def _load_transcripts(patterns):
    return [load_transcript(p) for p in _expand(patterns, ".jsonl")]


def _inventory_for(tr, override):
    ref = override or tr.config.get("session", {}).get("inventory", "mpi-120")
    return resolve_inventory(ref)


def _persona(text):
    if text and text.startswith("@"):
        return Path(text[1:]).read_text(encoding="utf-8").strip()
    return text


def _base_config(args, prefix: str) -> SessionConfig:
    load_variants(args.variants_file).get(args.variant)  # fail fast on unknown variants
    return SessionConfig(
        run_id=args.run_id or prefix,
        inventory=args.inventory,
        variant=args.variant,
        backend=args.backend,
        history_mode=args.mode,
        fewshot_k=args.fewshot,
        ordering=args.ordering,
        order_seed=args.seed,
        persona=_persona(args.persona),
        params=GenerationParams(temperature=args.temperature, max_tokens=args.max_tokens),
        paraphrases=args.paraphrases,
        paraphrase_version=args.paraphrase_version,
        variants_file=args.variants_file,
    )


def _execute(args, configs, runs_per_config: int, command: str, extra: dict) -> tuple[list, list[Path]]:
    out = Path(args.out)
    providers = load_providers(args.providers) if args.providers else None
    spec = parse_backend_spec(args.backend, providers)
    backend = make_backend(spec, providers)
    record = args.record or (str(out / "cassette.jsonl") if spec.kind == "http-chat" else None)
    if record:
        backend = RecordingBackend(backend, record, timestamps=not args.deterministic)
    trs = run_batch(configs, runs_per_config, master_seed=args.seed, out_dir=out / "transcripts",
                    jobs=args.jobs, deterministic=args.deterministic, backend=backend)
    paths = [out / "transcripts" / f"{t.run_id}.jsonl" for t in trs]
    if record:
        paths.append(Path(record))
    for t in trs:
        status = "ok" if t.valid else f"INVALID ({t.error})"
        print(f"{t.run_id}\t{len(t.entries)} items\t{status}")
    extra = dict(extra, preset_version=PRESET_VERSION, backend=args.backend, seed=args.seed,
                 run_ids=[t.run_id for t in trs])
    write_manifest(out, paths, command=command, extra=extra, deterministic=args.deterministic,
                   invalid=[t.run_id for t in trs if not t.valid])
    bad = [t.run_id for t in trs if not t.valid]
    if bad:
        raise CliError(f"{len(bad)} of {len(trs)} runs invalid: {', '.join(bad)}")
    return trs, paths


# -- subcommands -------------------------------------------------------------

def cmd_run(args) -> int:
    if args.factor:
        base = _base_config(args, args.factor)
        stability_runs = args.runs or 3
        preset = expand_preset(args.factor, base, stability_runs=stability_runs,
                               fewshot_ks=(args.fewshot,) if args.fewshot else (1, 5, 10))
        per = 1 if args.factor == "stability" else (args.runs or 1)
        _execute(args, preset.expansion, per, "run", {"preset": args.factor})
    else:
        base = _base_config(args, "run")
        _execute(args, [base], args.runs or 1, "run", {"preset": None})
    return 0


def _option_index(text: str) -> int:
    t = str(text).strip()
    if t.isdigit():
        return int(t)
    labels = "ABCDE"
    if t.upper() in labels:
        return labels.index(t.upper())
    raise CliError(f"--force-option {text!r} is neither a letter A-E nor an index 0-4")


def _option_area(trs, out: Path, deterministic: bool, smooth: bool = True) -> list[Path]:
    series = []
    for t in trs:
        labels = t.config.get("variant", {}).get("labels", list("ABCDE"))
        chosen = [e.presented_label for e in sorted(t.entries, key=lambda e: e.presentation_index)]
        series.append((t.run_id, labels, chosen))
    return emit_plot(PlotSpec("option-area", tuple(series), smooth=smooth), out / "plots", "option-area",
                     deterministic=deterministic)


def cmd_attack(args) -> int:
    forced = _option_index(args.force_option)
    args.mode = "context-dependent"
    base = _base_config(args, "adversarial")
    preset = expand_preset("adversarial", base, force_option=forced)
    trs, paths = _execute(args, preset.expansion, args.runs or 1, "attack", {"preset": "adversarial", "force_option": forced})
    paths += _option_area(trs, Path(args.out), args.deterministic)
    write_manifest(args.out, paths, command="attack", deterministic=args.deterministic,
                   extra={"preset": "adversarial", "force_option": forced, "preset_version": PRESET_VERSION})
    return 0


def cmd_ablate(args) -> int:
    base = _base_config(args, "fewshot")
    preset = expand_preset("fewshot-ablation", base, fewshot_ks=tuple(args.fewshot_ks))
    _execute(args, preset.expansion, args.runs or 1, "ablate", {"preset": "fewshot-ablation", "ks": args.fewshot_ks})
    return 0


def _session(tr) -> dict:
    return tr.config.get("session", {})


def cmd_score(args) -> int:
    out = Path(args.out)
    trs = _load_transcripts(args.transcripts)
    score_rows, traj_rows, opt_rows = [], [], []
    invalid = []
    for tr in trs:
        s = _session(tr)
        opts = scoring.option_counts(tr) if tr.entries else {}
        opt_rows += [(tr.run_id, k, v) for k, v in opts.items()]
        try:
            traj = scoring.trajectory_from_transcript(tr)
        except scoring.InvalidTranscript:
            invalid.append(tr.run_id)
            score_rows.append((tr.run_id, s.get("factor", ""), s.get("history_mode", ""), False, *[None] * 5))
            continue
        vec = scoring.ocean_score(traj, _inventory_for(tr, args.inventory))
        score_rows.append((tr.run_id, s.get("factor", ""), s.get("history_mode", ""), True, *vec.as_tuple()))
        traj_rows += [(tr.run_id, i, item, sc) for i, (item, sc) in enumerate(zip(traj.item_ids, traj.scores), 1)]
    paths = [
        write_csv(out / "scores.csv", ("run_id", "factor", "mode", "valid", *TRAITS), score_rows),
        write_csv(out / "trajectories.csv", ("run_id", "presentation_index", "item_id", "score"), traj_rows),
        write_csv(out / "options.csv", ("run_id", "option", "count"), opt_rows),
    ]
    write_manifest(out, paths, command="score", deterministic=args.deterministic, invalid=invalid)
    for row in score_rows:
        print("\t".join(str(x) for x in row))
    return 0


def _reliability(trajs) -> dict:
    mat = np.column_stack([t.as_array() for t in trajs])
    out = {}
    for name, fn in (("cronbach_alpha", stats.cronbach_alpha), ("test_retest", stats.test_retest)):
        try:
            out[name] = fn(mat)
        except stats.StatsError:
            out[name] = None
    return out


def cmd_metrics(args) -> int:
    out = Path(args.out)
    trs = _load_transcripts(args.transcripts)
    groups = defaultdict(list)
    invalid = []
    for tr in trs:
        if not tr.valid:
            invalid.append(tr.run_id)
            continue
        s = _session(tr)
        groups[(args.factor or s.get("factor") or "none", s.get("history_mode", "context-free"))].append(tr)
    rows, paths = [], []
    for (factor, mode), members in sorted(groups.items()):
        if len(members) < 2:
            invalid.append(f"{factor}/{mode}: only {len(members)} valid run")
            continue
        members = sorted(members, key=lambda t: t.run_id)
        trajs = [scoring.trajectory_from_transcript(t) for t in members]
        inv = _inventory_for(members[0], args.inventory)
        vectors = [scoring.ocean_score(t, inv) for t in trajs]
        settings = {
            "history_mode": mode,
            "model_id": members[0].config.get("model_id", ""),
            "variants": [_session(t).get("variant") for t in members],
            "temperatures": [_session(t).get("params", {}).get("temperature") for t in members],
            "inventory": inv.name,
        }
        rep = metrics.consistency_report(trajs, vectors, factor=factor, settings=settings)
        doc = rep.to_dict()
        doc["reliability"] = _reliability(trajs)
        doc["ocean"] = {t.run_id: v.as_dict() for t, v in zip(trajs, vectors)}
        paths.append(write_json(out / "reports" / f"{factor}-{mode}.json", doc))
        rows.append((factor, mode, len(members), rep.tar, rep.ed, rep.tc, rep.oc,
                     doc["reliability"]["cronbach_alpha"], doc["reliability"]["test_retest"],
                     ";".join(rep.run_ids)))
        print(f"{factor}\t{mode}\tTAR={rep.tar:.2f}\tED={rep.ed:.2f}\tTC={rep.tc:.2f}\tOC={rep.oc:.2f}")
    if not rows:
        raise CliError("no group had at least two valid runs")
    paths.append(write_csv(out / "metrics.csv", ("factor", "mode", "n_runs", "tar", "ed", "tc", "oc",
                                                 "cronbach_alpha", "test_retest", "run_ids"), rows))
    write_manifest(out, paths, command="metrics", deterministic=args.deterministic, invalid=invalid)
    return 0


def _safe(fn, *a):
    try:
        r = fn(*a)
    except stats.StatsError as exc:
        return {"skipped": str(exc)}
    return r.to_dict() if isinstance(r, stats.TestResult) else r


def cmd_stats(args) -> int:
    reports = [json.loads(p.read_text(encoding="utf-8")) for p in _expand(args.reports, ".json")]
    reports = [r for r in reports if all(k in r for k in METRIC_NAMES)]
    if len(reports) < 2:
        raise CliError(f"need at least two consistency reports, found {len(reports)}")
    cols = {m: [r[m] for r in reports] for m in METRIC_NAMES}
    corr = {}
    for a, b in combinations(METRIC_NAMES, 2):
        corr[f"{a}~{b}"] = {"pearson": _safe(stats.pearson, cols[a], cols[b]),
                            "spearman": _safe(stats.spearman, cols[a], cols[b])}
    by_factor = defaultdict(dict)
    for r in reports:
        by_factor[r.get("factor", "")][r.get("settings", {}).get("history_mode", "")] = r
    matched = [v for _, v in sorted(by_factor.items()) if "context-dependent" in v and "context-free" in v]
    conditions = {"n_pairs": len(matched), "factors": sorted(f for f, v in by_factor.items() if v in matched)}
    if len(matched) >= 2:
        for m in METRIC_NAMES:
            dep = [v["context-dependent"][m] for v in matched]
            free = [v["context-free"][m] for v in matched]
            try:
                res = stats.condition_tests(dep, free)
                conditions[m] = {k: (v.to_dict() if isinstance(v, stats.TestResult) else v) for k, v in res.items()}
            except stats.StatsError as exc:
                conditions[m] = {"skipped": str(exc)}
    rel = [r.get("reliability", {}) for r in reports]
    reliability = {}
    for key in ("cronbach_alpha", "test_retest"):
        vals = [x[key] for x in rel if x.get(key) is not None]
        reliability[key] = {"mean": float(np.mean(vals)) if vals else None, "n": len(vals)}
    doc = {"n_reports": len(reports), "correlations": corr, "condition_tests": conditions,
           "reliability": reliability}
    write_json(args.out, doc)
    print(f"wrote {args.out} ({len(reports)} reports)")
    return 0


def cmd_plot(args) -> int:
    out = Path(args.out)
    if args.kind == "diff-distribution":
        if not (args.dependent and args.free):
            raise CliError("diff-distribution needs --dependent and --free")
        dep = scoring.trajectory_from_transcript(load_transcript(args.dependent))
        free = scoring.trajectory_from_transcript(load_transcript(args.free))
        spec = PlotSpec("diff-distribution", (scoring.diff_histogram(dep, free, realign=args.realign),))
        paths = emit_plot(spec, out, "diff-distribution", deterministic=args.deterministic)
    else:
        if not args.transcripts:
            raise CliError(f"{args.kind} needs --transcripts")
        trs = _load_transcripts(args.transcripts)
        if args.kind == "option-area":
            paths = _option_area(trs, out, args.deterministic, smooth=args.smooth)
        else:
            trajs = [scoring.trajectory_from_transcript(t) for t in trs]
            if args.kind == "trajectory-lines":
                spec = PlotSpec("trajectory-lines", tuple(trajs))
            else:
                named = [(tj.run_id, scoring.ocean_score(tj, _inventory_for(t, args.inventory)))
                         for t, tj in zip(trs, trajs)]
                spec = PlotSpec("ocean-bars", tuple(named))
            paths = emit_plot(spec, out, args.kind, deterministic=args.deterministic)
    write_manifest(out, paths, command=f"plot {args.kind}", deterministic=args.deterministic)
    for p in paths:
        print(p)
    return 0


def _read_vector(path) -> metrics.ScaledVector:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    scores = doc.get("scores", doc)
    missing = [t for t in TRAITS if t not in scores]
    if missing:
        raise CliError(f"{path}: missing traits {missing}")
    return metrics.ScaledVector({t: float(scores[t]) for t in TRAITS}, tuple(doc.get("scale", (1.0, 5.0))))


def cmd_align(args) -> int:
    out = Path(args.out)
    human = _read_vector(args.human)
    if args.model:
        models = [("model", _read_vector(args.model))]
    elif args.transcripts:
        models = []
        for tr in _load_transcripts(args.transcripts):
            traj = scoring.trajectory_from_transcript(tr)
            vec = scoring.ocean_score(traj, _inventory_for(tr, args.inventory))
            models.append((tr.run_id, metrics.ScaledVector(vec.as_dict())))
    else:
        raise CliError("align needs --model or --transcripts")
    rows = []
    for name, mv in models:
        h = human.rescaled(mv.scale) if args.rescale else human
        rep = metrics.ocean_alignment(h, mv, args.mask)
        rows.append((name, rep.oa, rep.mae, "".join(rep.masked_traits)))
        print(f"{name}\tOA={rep.oa:.2f}\tMAE={rep.mae:.3f}")
    path = write_csv(out / "alignment.csv", ("run_id", "oa", "mae", "masked"), rows)
    write_manifest(out, [path], command="align", deterministic=args.deterministic)
    return 0


def cmd_pairs(args) -> int:
    out = Path(args.out)
    rows = []
    for tr in _load_transcripts(args.transcripts):
        inv = _inventory_for(tr, args.inventory)
        files = args.pairs or [str(builtin_path(n)) for n in DEFAULT_PAIRS]
        pfs = [load_pairs(f, inv) for f in files]
        traj = scoring.trajectory_from_transcript(tr)
        for kind, acc in scoring.logical_consistency(pfs, traj).items():
            rows.append((tr.run_id, kind, acc))
            print(f"{tr.run_id}\t{kind}\t{acc:.4f}")
    path = write_csv(out / "logical_consistency.csv", ("run_id", "kind", "accuracy"), rows)
    write_manifest(out, [path], command="pairs", deterministic=args.deterministic)
    return 0


COMMANDS = {
    "run": cmd_run, "attack": cmd_attack, "ablate": cmd_ablate, "score": cmd_score, "metrics": cmd_metrics,
    "stats": cmd_stats, "plot": cmd_plot, "align": cmd_align, "pairs": cmd_pairs,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    ap = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    try:
        if known.config:
            _apply_config(ap, known.config)
    except CliError as exc:
        print(f"error: CliError: {exc}", file=sys.stderr)
        return 1
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (CliError, BackendError, ValueError, OSError, KeyError, RuntimeError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
