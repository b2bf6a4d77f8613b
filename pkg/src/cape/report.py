"""CSV tables, static SVG plots and the artifact manifest.

CSV is the contract: floats are written with a fixed six decimals and rows in
a fixed order so identical inputs give byte-identical files.  SVGs are a
convenience rendering of the same rows.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.interpolate import make_interp_spline

from . import __version__
from .inventory import TRAITS
from .scoring import BUCKETS, OceanScore, ScoringTrajectory
from .session import atomic_write

PLOT_KINDS = ("trajectory-lines", "ocean-bars", "diff-distribution", "option-area")
OPTION_WINDOW = 10
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class PlotSpec:
    kind: str
    series: tuple  # per-kind payload, see emit_plot
    labels: tuple[str, ...] = ()
    smooth: bool = False

    def __post_init__(self):
        if self.kind not in PLOT_KINDS:
            raise ReportError(f"unknown plot kind {self.kind!r}")
        if not self.series:
            raise ReportError(f"{self.kind}: no inputs")


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        if not np.isfinite(v):
            return "nan"
        out = f"{float(v):.6f}"
        return "0.000000" if out == "-0.000000" else out
    return str(v)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> Path:
    return atomic_write(path, csv_text(header, rows))


def write_json(path, doc) -> Path:
    return atomic_write(path, json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, artifacts: Sequence, *, command: str, extra: dict | None = None,
                   deterministic: bool = True, invalid: Sequence[str] = ()) -> Path:
    out_dir = Path(out_dir)
    rows = []
    for p in sorted({Path(a) for a in artifacts}):
        rel = p.relative_to(out_dir) if p.is_relative_to(out_dir) else p
        rows.append({"path": rel.as_posix(), "sha256": sha256_file(p), "bytes": p.stat().st_size})
    doc = {
        "tool": "cape",
        "version": __version__,
        "command": command,
        "artifacts": rows,
        "invalid": sorted(invalid),
    }
    if extra:
        doc.update(extra)
    if not deterministic:
        doc["created"] = time.time()
    return write_json(out_dir / "manifest.json", doc)


# -- table builders ---------------------------------------------------------

def trajectory_rows(trajs: Sequence[ScoringTrajectory]):
    for t in trajs:
        for i, (item, s) in enumerate(zip(t.item_ids, t.scores), start=1):
            yield (t.run_id, i, item, s)


def ocean_rows(named: Sequence[tuple[str, OceanScore]]):
    for name, vec in named:
        for t in TRAITS:
            yield (name, t, getattr(vec, t))


def diff_rows(hist: dict[int, int]):
    return [(b, hist.get(b, 0)) for b in BUCKETS]


def option_series(labels: Sequence[str], chosen: Sequence[str | None], window: int = OPTION_WINDOW):
    """Counts of each option per block of ``window`` consecutive questions."""
    rows = []
    for start in range(0, len(chosen), window):
        block = chosen[start:start + window]
        for lab in labels:
            rows.append((start + 1, lab, sum(1 for c in block if c == lab)))
    return rows


# -- SVG --------------------------------------------------------------------

W, H, PAD = 640, 360, 48


def _esc(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


class _Canvas:
    def __init__(self, title: str, xr: tuple[float, float], yr: tuple[float, float], deterministic: bool):
        self.parts = []
        self.xr, self.yr = xr, yr
        head = f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">'
        self.parts.append(head)
        if not deterministic:
            self.parts.append(f"<!-- cape {__version__} {time.strftime('%Y-%m-%dT%H:%M:%S')} -->")
        self.parts.append(f'<rect width="{W}" height="{H}" fill="white"/>')
        self.parts.append(f'<text x="{W / 2:.1f}" y="20" text-anchor="middle" font-size="14">{_esc(title)}</text>')
        self.parts.append(
            f'<path d="M{PAD},{PAD / 2 + 8} V{H - PAD} H{W - PAD / 2}" stroke="black" fill="none"/>'
        )

    def x(self, v: float) -> float:
        lo, hi = self.xr
        return PAD + (v - lo) / ((hi - lo) or 1.0) * (W - 1.5 * PAD)

    def y(self, v: float) -> float:
        lo, hi = self.yr
        return H - PAD - (v - lo) / ((hi - lo) or 1.0) * (H - 1.5 * PAD - 8)

    def add(self, s: str) -> None:
        self.parts.append(s)

    def legend(self, names: Sequence[str]) -> None:
        for i, n in enumerate(names):
            c = PALETTE[i % len(PALETTE)]
            y = PAD / 2 + 12 + 14 * i
            self.add(f'<rect x="{W - 150}" y="{y - 9}" width="10" height="10" fill="{c}"/>')
            self.add(f'<text x="{W - 135}" y="{y}" font-size="11">{_esc(n)}</text>')

    def tick(self, v: float, label: str, axis: str) -> None:
        if axis == "x":
            self.add(f'<text x="{self.x(v):.1f}" y="{H - PAD + 16}" text-anchor="middle" font-size="10">{_esc(label)}</text>')
        else:
            self.add(f'<text x="{PAD - 6}" y="{self.y(v) + 3:.1f}" text-anchor="end" font-size="10">{_esc(label)}</text>')

    def svg(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _polyline(cv: _Canvas, xs, ys, color: str, width: float = 1.2) -> None:
    pts = " ".join(f"{cv.x(a):.2f},{cv.y(b):.2f}" for a, b in zip(xs, ys))
    cv.add(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"/>')


def svg_trajectories(trajs: Sequence[ScoringTrajectory], deterministic: bool = True) -> str:
    m = max(len(t) for t in trajs)
    cv = _Canvas("Scoring trajectories", (1, m), (1, 5), deterministic)
    for s in range(1, 6):
        cv.tick(s, str(s), "y")
    for v in (1, m):
        cv.tick(v, str(v), "x")
    for i, t in enumerate(trajs):
        _polyline(cv, range(1, len(t) + 1), t.scores, PALETTE[i % len(PALETTE)])
    cv.legend([t.run_id for t in trajs])
    return cv.svg()


def svg_ocean_bars(named: Sequence[tuple[str, OceanScore]], deterministic: bool = True) -> str:
    cv = _Canvas("OCEAN scores", (0, len(TRAITS)), (0, 5), deterministic)
    k = len(named)
    slot = (W - 1.5 * PAD) / len(TRAITS)
    bw = 0.8 * slot / max(k, 1)
    for ti, trait in enumerate(TRAITS):
        cv.tick(ti + 0.5, trait, "x")
        for si, (_, vec) in enumerate(named):
            v = getattr(vec, trait)
            x0 = cv.x(ti) + 0.1 * slot + si * bw
            cv.add(f'<rect x="{x0:.2f}" y="{cv.y(v):.2f}" width="{bw:.2f}" height="{cv.y(0) - cv.y(v):.2f}" '
                   f'fill="{PALETTE[si % len(PALETTE)]}"/>')
    for s in range(0, 6):
        cv.tick(s, str(s), "y")
    cv.legend([n for n, _ in named])
    return cv.svg()


def svg_diff(hist: dict[int, int], deterministic: bool = True) -> str:
    top = max(max(hist.values()), 1)
    cv = _Canvas("Score shift (dependent - free)", (BUCKETS[0] - 0.5, BUCKETS[-1] + 0.5), (0, top), deterministic)
    bw = 0.8 * (cv.x(1) - cv.x(0))
    for b in BUCKETS:
        cv.tick(b, f"{b:+d}" if b else "0", "x")
        c = hist.get(b, 0)
        if c:
            cv.add(f'<rect x="{cv.x(b) - bw / 2:.2f}" y="{cv.y(c):.2f}" width="{bw:.2f}" '
                   f'height="{cv.y(0) - cv.y(c):.2f}" fill="{PALETTE[0]}"/>')
    cv.tick(top, str(top), "y")
    return cv.svg()


def smooth_curve(xs, ys, n: int = 100):
    """Quadratic spline through the points; falls back to the raw points."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.size < 3:
        return xs, ys
    spl = make_interp_spline(xs, ys, k=2)
    fine = np.linspace(xs[0], xs[-1], n)
    return fine, np.maximum(spl(fine), 0.0)


def svg_option_area(settings: Sequence[tuple[str, list]], labels: Sequence[str], smooth: bool,
                    deterministic: bool = True) -> str:
    """Stacked option-frequency areas, one panel band per setting."""
    starts = sorted({r[0] for _, rows in settings for r in rows})
    top = max((sum(r[2] for r in rows if r[0] == s) for _, rows in settings for s in starts), default=1)
    nset = len(settings)
    cv = _Canvas("Option choices by position", (starts[0], starts[-1]), (0, top * nset), deterministic)
    for si, (name, rows) in enumerate(settings):
        base = np.full(len(starts), float(top * (nset - 1 - si)))
        for li, lab in enumerate(labels):
            counts = np.array([next((r[2] for r in rows if r[0] == s and r[1] == lab), 0) for s in starts], float)
            xs, lo = smooth_curve(starts, base) if smooth else (np.asarray(starts, float), base)
            _, hi = smooth_curve(starts, base + counts) if smooth else (None, base + counts)
            hi = np.maximum(hi, lo)
            pts = [f"{cv.x(a):.2f},{cv.y(b):.2f}" for a, b in zip(xs, hi)]
            pts += [f"{cv.x(a):.2f},{cv.y(b):.2f}" for a, b in zip(xs[::-1], lo[::-1])]
            cv.add(f'<polygon points="{" ".join(pts)}" fill="{PALETTE[li % len(PALETTE)]}" fill-opacity="0.85"/>')
            base = base + counts
        cv.tick(top * (nset - si - 0.5), name, "y")
    cv.legend(list(labels))
    return cv.svg()


def emit_plot(spec: PlotSpec, out_dir, stem: str, *, deterministic: bool = True) -> list[Path]:
    """Write ``<stem>.csv`` and ``<stem>.svg``; returns the paths.

    ``spec.series`` per kind: trajectory-lines -> ScoringTrajectory objects;
    ocean-bars -> (name, OceanScore) pairs; diff-distribution -> one
    histogram dict; option-area -> (name, labels, chosen-label list) triples.
    """
    out_dir = Path(out_dir)
    if spec.kind == "trajectory-lines":
        trajs = list(spec.series)
        table = csv_text(("run_id", "presentation_index", "item_id", "score"), trajectory_rows(trajs))
        svg = svg_trajectories(trajs, deterministic)
    elif spec.kind == "ocean-bars":
        named = list(spec.series)
        table = csv_text(("setting", "trait", "score"), ocean_rows(named))
        svg = svg_ocean_bars(named, deterministic)
    elif spec.kind == "diff-distribution":
        hist = spec.series[0]
        if sum(hist.values()) == 0:
            raise ReportError("diff-distribution: empty histogram")
        table = csv_text(("bucket", "count"), diff_rows(hist))
        svg = svg_diff(hist, deterministic)
    else:
        settings, rows = [], []
        labels = None
        for name, labs, chosen in spec.series:
            labels = labels or tuple(labs)
            srows = option_series(labels, chosen)
            settings.append((name, srows))
            rows += [(name, *r) for r in srows]
        table = csv_text(("setting", "window_start", "option", "count"), rows)
        svg = svg_option_area(settings, labels, spec.smooth, deterministic)
    return [atomic_write(out_dir / f"{stem}.csv", table), atomic_write(out_dir / f"{stem}.svg", svg)]
