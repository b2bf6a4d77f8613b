"""Keyed item scores, trajectories, OCEAN vectors and score-shift summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .inventory import TRAITS, Inventory, InventoryItem, PairFile
from .prompt import ParsedChoice

MIDPOINT = 2.5
BUCKETS = tuple(range(-4, 5))


class InvalidTranscript(ValueError):
    pass


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class ScoringTrajectory:
    run_id: str
    scores: tuple[int, ...]
    item_ids: tuple[str, ...]

    def __post_init__(self):
        if len(self.scores) != len(self.item_ids):
            raise ScoringError("scores and item_ids differ in length")
        bad = [s for s in self.scores if s not in (1, 2, 3, 4, 5)]
        if bad:
            raise ScoringError(f"scores outside 1..5: {bad[:5]}")

    def __len__(self) -> int:
        return len(self.scores)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.scores, dtype=np.float64)

    def by_item(self) -> dict[str, int]:
        return dict(zip(self.item_ids, self.scores))


@dataclass(frozen=True)
class OceanScore:
    O: float
    C: float
    E: float
    A: float
    N: float

    def __post_init__(self):
        for t in TRAITS:
            v = getattr(self, t)
            if not 1.0 <= v <= 5.0:
                raise ScoringError(f"trait {t} score {v} outside [1, 5]")

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, t) for t in TRAITS)

    def as_dict(self) -> dict[str, float]:
        return {t: getattr(self, t) for t in TRAITS}


def score_from_index(key: int, semantic_index: int) -> int:
    if semantic_index not in range(5):
        raise ScoringError(f"semantic index {semantic_index} outside 0..4")
    return 5 - semantic_index if key == 1 else 1 + semantic_index


def score_response(item: InventoryItem, choice: ParsedChoice) -> int:
    """Agreement on a +key item scores 5..1 from most- to least-agree; -key reverses."""
    return score_from_index(item.key, choice.semantic_index)


def trajectory_from_transcript(transcript) -> ScoringTrajectory:
    entries = transcript.entries
    missing = [e.item_id for e in entries if e.score is None]
    if missing or not transcript.valid:
        what = f"missing scores for {', '.join(missing[:5])}" if missing else "run flagged invalid"
        raise InvalidTranscript(f"transcript {transcript.run_id}: {what}")
    ordered = sorted(entries, key=lambda e: e.presentation_index)
    return ScoringTrajectory(
        run_id=transcript.run_id,
        scores=tuple(e.score for e in ordered),
        item_ids=tuple(e.item_id for e in ordered),
    )


def ocean_score(traj: ScoringTrajectory, inv: Inventory) -> OceanScore:
    if sorted(traj.item_ids) != sorted(inv.ids):
        raise ScoringError(f"trajectory {traj.run_id} does not cover inventory {inv.name!r} exactly once")
    sums = dict.fromkeys(TRAITS, 0.0)
    counts = dict.fromkeys(TRAITS, 0)
    for item_id, s in zip(traj.item_ids, traj.scores):
        trait = inv.get(item_id).trait
        sums[trait] += s
        counts[trait] += 1
    return OceanScore(**{t: sums[t] / counts[t] for t in TRAITS})


def _realign(dep: ScoringTrajectory, free: ScoringTrajectory) -> tuple[np.ndarray, np.ndarray]:
    if dep.item_ids == free.item_ids:
        return dep.as_array(), free.as_array()
    if sorted(dep.item_ids) != sorted(free.item_ids):
        raise ScoringError("trajectories cover different items")
    other = free.by_item()
    return dep.as_array(), np.asarray([other[i] for i in dep.item_ids], dtype=np.float64)


def diff_histogram(dep: ScoringTrajectory, free: ScoringTrajectory, *, realign: bool = False) -> dict[int, int]:
    """Count per-item score shifts ``dep - free`` into buckets -4..+4.

    Both trajectories must share presentation order unless ``realign`` is set,
    in which case ``free`` is matched to ``dep`` by item id.
    """
    if realign:
        a, b = _realign(dep, free)
    else:
        if dep.item_ids != free.item_ids:
            raise ScoringError("trajectories are not in the same presentation order")
        a, b = dep.as_array(), free.as_array()
    hist = dict.fromkeys(BUCKETS, 0)
    for d in (a - b).astype(int):
        hist[int(d)] += 1
    return hist


def pair_is_accurate(kind: str, s1: float, s2: float) -> bool:
    if kind == "semantically-similar":
        return (s1 > MIDPOINT and s2 > MIDPOINT) or (s1 < MIDPOINT and s2 < MIDPOINT)
    if kind == "logically-inconsistent":
        return (s1 - MIDPOINT) * (s2 - MIDPOINT) < 0
    raise ScoringError(f"unknown pair kind {kind!r}")


def logical_consistency(pairs: PairFile | list[PairFile], traj: ScoringTrajectory) -> dict[str, float]:
    """Fraction of accurate pairs per pair kind, on keyed scores."""
    files = pairs if isinstance(pairs, list) else [pairs]
    scores = traj.by_item()
    out = {}
    for pf in files:
        hits = 0
        for a, b in pf.pairs:
            if a not in scores or b not in scores:
                raise ScoringError(f"pair ({a}, {b}) references an item missing from run {traj.run_id}")
            hits += pair_is_accurate(pf.kind, scores[a], scores[b])
        out[pf.kind] = hits / len(pf.pairs) if pf.pairs else float("nan")
    return out


def option_counts(transcript) -> dict[str, int]:
    """How often each displayed option letter was chosen in one run."""
    counts: dict[str, int] = {}
    labels = transcript.config.get("variant", {}).get("labels", list("ABCDE"))
    for lab in labels:
        counts[lab] = 0
    for e in transcript.entries:
        if e.semantic_index is not None:
            counts[labels[e.semantic_index]] += 1
    return counts
