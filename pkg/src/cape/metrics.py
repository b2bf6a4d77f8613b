"""Consistency metrics across repeated runs and trait-vector alignment.

TAR and ED compare trajectories point by point.  TC smooths and z-scores
each trajectory, fits a GP to it, and integrates the ratio of the
intersection to the union of the 95% support bands over the question axis.
OC runs the same pipeline on a value-sorted expansion of every trait
permutation of the OCEAN vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations, permutations
from typing import Sequence

import numpy as np

from . import gp, kernels
from .inventory import TRAITS
from .scoring import OceanScore, ScoringTrajectory

Z_95 = 1.96
MIN_GRID = 200


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if self.hi < self.lo:
            raise MetricError(f"interval upper bound {self.hi} below lower bound {self.lo}")

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass
class ConsistencyReport:
    tar: float
    ed: float
    tc: float
    oc: float
    run_ids: list[str]
    factor: str = ""
    settings: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("tar", "tc", "oc"):
            v = getattr(self, name)
            if not (0.0 <= v <= 100.0 + 1e-9):
                raise MetricError(f"{name}={v} outside [0, 100]")
        if self.ed < 0:
            raise MetricError(f"ed={self.ed} is negative")

    def to_dict(self) -> dict:
        return {
            "factor": self.factor,
            "tar": self.tar,
            "ed": self.ed,
            "tc": self.tc,
            "oc": self.oc,
            "run_ids": list(self.run_ids),
            "settings": dict(self.settings),
        }


@dataclass(frozen=True)
class AlignmentReport:
    oa: float
    mae: float
    masked_traits: tuple[str, ...] = ()


def _stack(trajs) -> np.ndarray:
    if len(trajs) < 2:
        raise MetricError("need at least two trajectories")
    rows = [t.as_array() if isinstance(t, ScoringTrajectory) else np.asarray(t, dtype=np.float64) for t in trajs]
    if len({r.size for r in rows}) != 1:
        raise MetricError(f"trajectory lengths differ: {[r.size for r in rows]}")
    ids = [t.item_ids for t in trajs if isinstance(t, ScoringTrajectory)]
    if ids and any(i != ids[0] for i in ids):
        raise MetricError("trajectories are not in the same presentation order")
    return np.vstack(rows)


def tar(trajs) -> float:
    """Percentage of positions where every trajectory agrees."""
    y = _stack(trajs)
    agree = int(np.all(y == y[0], axis=0).sum())
    return 100.0 * agree / y.shape[1]


def ed(trajs) -> float:
    """Mean absolute pairwise per-item distance, averaged over pairs and items."""
    y = _stack(trajs)
    pairs = list(combinations(range(y.shape[0]), 2))
    total = sum(np.abs(y[i] - y[j]).sum() for i, j in pairs)
    return float(total / (len(pairs) * y.shape[1]))


def _bounds(intervals) -> tuple[np.ndarray, np.ndarray]:
    lo = np.array([iv.lo if isinstance(iv, Interval) else iv[0] for iv in intervals], dtype=np.float64)
    hi = np.array([iv.hi if isinstance(iv, Interval) else iv[1] for iv in intervals], dtype=np.float64)
    return lo, hi


def intersect_width(intervals) -> float:
    lo, hi = _bounds(intervals)
    if lo.size < 1:
        raise MetricError("no intervals")
    return float(max(0.0, hi.min() - lo.max()))


def union_width(intervals) -> float:
    """Total length covered by the intervals after merging overlaps."""
    lo, hi = _bounds(intervals)
    if lo.size < 1:
        raise MetricError("no intervals")
    return kernels.union_width(lo, hi)


def query_grid(m: int) -> np.ndarray:
    return np.linspace(1.0, float(m), max(MIN_GRID, 4 * m))


def support_bands(series: Sequence, omega: int = gp.DEFAULT_WINDOW, z: float = Z_95):
    """Per-series GP support bands on the shared grid; returns (grid, lo, hi)."""
    y = _stack(series)
    m = y.shape[1]
    if m < 2:
        raise MetricError("series need at least two points")
    grid = query_grid(m)
    lows, highs = [], []
    for row in y:
        sm = gp.smooth(row, omega)
        post = gp.fit_gpr(sm.xs, sm.ys, grid)
        lo, hi = gp.support_interval(post, z)
        lows.append(lo)
        highs.append(hi)
    return grid, np.vstack(lows), np.vstack(highs)


def overlap_profile(series: Sequence, omega: int = gp.DEFAULT_WINDOW, z: float = Z_95):
    grid, lo, hi = support_bands(series, omega, z)
    return grid, kernels.overlap_ratio(lo, hi)


def tc(trajs, omega: int = gp.DEFAULT_WINDOW, z: float = Z_95) -> float:
    """Trajectory consistency in percent."""
    grid, ratio = overlap_profile(trajs, omega, z)
    mean_ratio = np.trapezoid(ratio, grid) / (grid[-1] - grid[0])
    return float(np.clip(100.0 * mean_ratio, 0.0, 100.0))


def _vector(v) -> tuple[float, ...]:
    if isinstance(v, OceanScore):
        return v.as_tuple()
    return tuple(float(x) for x in v)


def permutation_series(vector) -> np.ndarray:
    """Concatenate every permutation of ``vector``, blocks sorted by value."""
    vals = _vector(vector)
    blocks = sorted(permutations(vals))
    return np.asarray(blocks, dtype=np.float64).ravel()


def oc(vectors, omega: int = gp.DEFAULT_WINDOW, z: float = Z_95) -> float:
    """OCEAN consistency in percent."""
    if len(vectors) < 2:
        raise MetricError("need at least two trait vectors")
    if len({len(_vector(v)) for v in vectors}) != 1:
        raise MetricError("trait vectors differ in length")
    return tc([permutation_series(v) for v in vectors], omega, z)


def consistency_report(trajs, vectors, *, factor: str = "", settings: dict | None = None) -> ConsistencyReport:
    return ConsistencyReport(
        tar=tar(trajs),
        ed=ed(trajs),
        tc=tc(trajs),
        oc=oc(vectors),
        run_ids=[t.run_id for t in trajs if isinstance(t, ScoringTrajectory)],
        factor=factor,
        settings=dict(settings or {}),
    )


@dataclass(frozen=True)
class ScaledVector:
    """Trait scores on an explicit scale, e.g. human annotations."""

    scores: dict[str, float]
    scale: tuple[float, float] = (1.0, 5.0)

    def rescaled(self, scale: tuple[float, float]) -> "ScaledVector":
        (a, b), (c, d) = self.scale, scale
        return ScaledVector({t: c + (v - a) * (d - c) / (b - a) for t, v in self.scores.items()}, scale)


def ocean_alignment(human, model, mask=()) -> AlignmentReport:
    """OA (OC between the two vectors) and MAE over unmasked traits."""
    human = human if isinstance(human, ScaledVector) else ScaledVector(_as_trait_dict(human))
    model = model if isinstance(model, ScaledVector) else ScaledVector(_as_trait_dict(model))
    if tuple(human.scale) != tuple(model.scale):
        raise MetricError(f"scale mismatch: human {human.scale} vs model {model.scale}")
    masked = tuple(t for t in TRAITS if t in set(mask))
    keep = [t for t in TRAITS if t not in masked]
    if not keep:
        raise MetricError("every trait is masked")
    h = [human.scores[t] for t in keep]
    m = [model.scores[t] for t in keep]
    mae = float(np.mean(np.abs(np.subtract(h, m))))
    return AlignmentReport(oa=oc([h, m]), mae=mae, masked_traits=masked)


def _as_trait_dict(v) -> dict[str, float]:
    if isinstance(v, OceanScore):
        return v.as_dict()
    if isinstance(v, dict):
        return {t: float(v[t]) for t in TRAITS}
    return dict(zip(TRAITS, (float(x) for x in v)))
