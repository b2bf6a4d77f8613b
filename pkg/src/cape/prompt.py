"""Prompt rendering and reply parsing.

Labels stay attached to their wordings: an option-order variant only changes
the sequence in which the (label, wording) pairs are displayed.  Scoring works
on the semantic index (0 = most-agree wording, 4 = most-disagree).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .inventory import InventoryItem

N_OPTIONS = 5
REASK_SUFFIX = "Answer with a single option letter."


class PromptError(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, message: str, raw_text: str):
        super().__init__(message)
        self.raw_text = raw_text


class NoChoice(ParseError):
    pass


class AmbiguousChoice(ParseError):
    pass


@dataclass(frozen=True)
class OptionSet:
    labels: tuple[str, ...] = ("A", "B", "C", "D", "E")
    wordings: tuple[str, ...] = ()
    presentation_order: tuple[int, ...] = (0, 1, 2, 3, 4)

    def __post_init__(self):
        if len(self.labels) != N_OPTIONS or len(self.wordings) != N_OPTIONS:
            raise PromptError("an option set needs exactly 5 labels and 5 wordings")
        if len(set(self.labels)) != N_OPTIONS:
            raise PromptError(f"option labels are not unique: {self.labels}")
        if len({w.lower() for w in self.wordings}) != N_OPTIONS:
            raise PromptError(f"option wordings are not unique: {self.wordings}")
        if sorted(self.presentation_order) != list(range(N_OPTIONS)):
            raise PromptError(f"presentation_order {self.presentation_order} is not a permutation of 0..4")


@dataclass(frozen=True)
class PromptVariant:
    variant_id: str
    instruction_template: str
    option_set: OptionSet
    option_format: str = "({label}) {wording}"
    option_joiner: str = "\n"

    def __post_init__(self):
        for ph in ("{item}", "{options}"):
            if self.instruction_template.count(ph) != 1:
                raise PromptError(f"variant {self.variant_id!r}: template must contain {ph} exactly once")

    def label_of(self, semantic_index: int) -> str:
        return self.option_set.labels[semantic_index]

    def option_text(self, semantic_index: int) -> str:
        return self.option_format.format(
            label=self.option_set.labels[semantic_index],
            wording=self.option_set.wordings[semantic_index],
        )

    def to_dict(self) -> dict:
        return {
            "variant_id": self.variant_id,
            "instruction_template": self.instruction_template,
            "option_format": self.option_format,
            "option_joiner": self.option_joiner,
            "labels": list(self.option_set.labels),
            "wordings": list(self.option_set.wordings),
            "presentation_order": list(self.option_set.presentation_order),
        }


@dataclass(frozen=True)
class ParsedChoice:
    semantic_index: int
    presented_label: str
    raw_text: str


@dataclass(frozen=True)
class VariantBundle:
    variants: dict[str, PromptVariant]
    factors: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def get(self, variant_id: str) -> PromptVariant:
        try:
            return self.variants[variant_id]
        except KeyError:
            known = ", ".join(sorted(self.variants))
            raise PromptError(f"unknown variant {variant_id!r} (known: {known})") from None


def variant_from_dict(row: dict) -> PromptVariant:
    try:
        opts = OptionSet(
            labels=tuple(row.get("labels", "ABCDE")),
            wordings=tuple(row["wordings"]),
            presentation_order=tuple(row.get("presentation_order", range(N_OPTIONS))),
        )
        return PromptVariant(
            variant_id=row["variant_id"],
            instruction_template=row["instruction_template"],
            option_set=opts,
            option_format=row.get("option_format", "({label}) {wording}"),
            option_joiner=row.get("option_joiner", "\n"),
        )
    except KeyError as exc:
        raise PromptError(f"variant row missing field {exc}") from None


def load_variants(path=None) -> VariantBundle:
    """Load a variant bundle; ``None`` gives the bundled one."""
    if path is None:
        return _builtin_bundle()
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    variants = {}
    for row in doc.get("variants", []):
        v = variant_from_dict(row)
        variants[v.variant_id] = v
    factors = {k: tuple(v) for k, v in doc.get("factors", {}).items()}
    return VariantBundle(variants=variants, factors=factors)


@lru_cache(maxsize=1)
def _builtin_bundle() -> VariantBundle:
    return load_variants(Path(str(resources.files("cape") / "data" / "variants.json")))


def default_variant() -> PromptVariant:
    return _builtin_bundle().get("default")


def render_options(variant: PromptVariant) -> str:
    return variant.option_joiner.join(variant.option_text(s) for s in variant.option_set.presentation_order)


def render_prompt(item: InventoryItem | str, variant: PromptVariant) -> str:
    text = item if isinstance(item, str) else item.text
    text = text.strip().rstrip(".")
    # the template supplies the leading "You"; items are stored without it
    return (variant.instruction_template
            .replace("{options}", render_options(variant))
            .replace("{item}", text))


_PAREN = re.compile(r"\(\s*([A-Za-z])\s*\)|(?<![A-Za-z])([A-Z])\)")
_BARE = re.compile(r"(?<![A-Za-z'])([A-Z])(?![A-Za-z'])")


def _norm(s: str) -> str:
    return " ".join(re.sub(r"[^\w\s]", " ", s.lower()).split())


def _letter_matches(reply: str, labels) -> set[str]:
    hits = {(a or b).upper() for a, b in _PAREN.findall(reply)} & set(labels)
    if hits:
        return hits
    return set(_BARE.findall(reply)) & set(labels)


def _substring_matches(reply: str, wordings) -> list[int]:
    low = reply.lower()
    spans = {}
    for idx, w in enumerate(wordings):
        wl = w.lower()
        found = [(m.start(), m.start() + len(wl)) for m in re.finditer(re.escape(wl), low)]
        if found:
            spans[idx] = found
    keep = []
    for idx, occ in spans.items():
        # an occurrence nested inside a longer matched wording does not count
        free = [
            (a, b) for a, b in occ
            if not any(o != idx and any(c <= a and b <= d and (d - c) > (b - a) for c, d in spans[o]) for o in spans)
        ]
        if free:
            keep.append(idx)
    return keep


def parse_choice(reply: str, variant: PromptVariant) -> ParsedChoice:
    """Resolve a model reply to an option.

    Precedence: option letter (bare or parenthesised), then exact wording,
    then a unique wording substring.
    """
    labels = variant.option_set.labels
    wordings = variant.option_set.wordings
    letters = _letter_matches(reply, labels)
    if len(letters) == 1:
        label = letters.pop()
        return ParsedChoice(labels.index(label), label, reply)
    if len(letters) > 1:
        raise AmbiguousChoice(f"reply names several options: {sorted(letters)}", reply)

    target = _norm(reply)
    for idx, w in enumerate(wordings):
        if _norm(w) == target:
            return ParsedChoice(idx, labels[idx], reply)

    hits = _substring_matches(reply, wordings)
    if len(hits) == 1:
        return ParsedChoice(hits[0], labels[hits[0]], reply)
    if hits:
        raise AmbiguousChoice(f"reply matches several wordings: {[wordings[i] for i in hits]}", reply)
    raise NoChoice("reply names no option", reply)
