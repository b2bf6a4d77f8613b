"""Psychometric inventories, paraphrase sidecars and item-pair files.

All three file kinds are UTF-8 JSON carrying ``schema_version`` (currently 1).
Inventories keep file order as the canonical presentation order.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

SCHEMA_VERSION = 1
TRAITS = ("O", "C", "E", "A", "N")
PAIR_KINDS = ("semantically-similar", "logically-inconsistent")


class InventoryError(ValueError):
    """Schema or consistency violation in an inventory-related file."""


@dataclass(frozen=True)
class InventoryItem:
    id: str
    text: str
    trait: str
    key: int
    facet: str | None = None

    def __post_init__(self):
        if self.trait not in TRAITS:
            raise InventoryError(f"item {self.id!r}: unknown trait {self.trait!r}")
        if self.key not in (1, -1):
            raise InventoryError(f"item {self.id!r}: key must be +1 or -1, got {self.key!r}")
        if not self.text or not self.text.strip():
            raise InventoryError(f"item {self.id!r}: empty text")


@dataclass(frozen=True)
class Inventory:
    name: str
    items: tuple[InventoryItem, ...]
    _by_id: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        seen = Counter(it.id for it in self.items)
        dupes = [i for i, c in seen.items() if c > 1]
        if dupes:
            raise InventoryError(f"duplicate item ids: {', '.join(dupes)}")
        missing = [t for t in TRAITS if not any(it.trait == t for it in self.items)]
        if missing:
            raise InventoryError(f"inventory {self.name!r} has no items for trait(s) {', '.join(missing)}")
        object.__setattr__(self, "_by_id", {it.id: it for it in self.items})

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._by_id

    def get(self, item_id: str) -> InventoryItem:
        try:
            return self._by_id[item_id]
        except KeyError:
            raise InventoryError(f"unknown item id {item_id!r}") from None

    @property
    def ids(self) -> list[str]:
        return [it.id for it in self.items]


@dataclass(frozen=True)
class ParaphraseSet:
    inventory_name: str
    variants: dict[str, tuple[str, ...]]

    def text_for(self, item: InventoryItem, version: int) -> str:
        """Item text for paraphrase ``version`` (0 = original wording).

        Items without a sidecar entry, or with fewer paraphrases than
        requested, keep their original text.
        """
        if version == 0:
            return item.text
        alts = self.variants.get(item.id, ())
        return alts[version - 1] if version <= len(alts) else item.text

    @property
    def max_versions(self) -> int:
        return 1 + max((len(v) for v in self.variants.values()), default=0)


@dataclass(frozen=True)
class PairFile:
    kind: str
    pairs: tuple[tuple[str, str], ...]

    def __len__(self) -> int:
        return len(self.pairs)


def _read_json(path) -> dict:
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise InventoryError(f"{path}: file not found") from None
    if not raw.strip():
        raise InventoryError(f"{path}: empty file")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise InventoryError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise InventoryError(f"{path}: top level must be an object")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise InventoryError(f"{path}: unsupported schema_version {version!r}")
    return doc


def parse_inventory(doc: dict, source: str = "<inventory>") -> Inventory:
    rows = doc.get("items")
    if not isinstance(rows, list) or not rows:
        raise InventoryError(f"{source}: no items")
    items = []
    for pos, row in enumerate(rows, start=1):
        item_id = row.get("id") if isinstance(row, dict) else None
        where = f"{source}: row {pos} (id {item_id!r})"
        if not item_id:
            raise InventoryError(f"{where}: missing id")
        try:
            items.append(InventoryItem(
                id=str(item_id),
                text=row.get("text", ""),
                trait=row.get("trait"),
                key=row.get("key"),
                facet=row.get("facet"),
            ))
        except InventoryError as exc:
            raise InventoryError(f"{where}: {exc}") from None
    return Inventory(name=str(doc.get("name", "")), items=tuple(items))


def load_inventory(path) -> Inventory:
    """Load and validate an inventory file."""
    return parse_inventory(_read_json(path), source=str(path))


def builtin_path(name: str) -> Path:
    return Path(str(resources.files("cape") / "data" / name))


def load_builtin(name: str = "mpi_120.json") -> Inventory:
    return load_inventory(builtin_path(name))


def resolve_inventory(ref: str) -> Inventory:
    """Accept a file path or a bundled name such as ``mpi-120``."""
    if Path(ref).exists():
        return load_inventory(ref)
    bundled = {"mpi-120": "mpi_120.json", "mpi_120": "mpi_120.json", "mpi": "mpi_120.json"}
    if ref.lower() in bundled:
        return load_builtin(bundled[ref.lower()])
    raise InventoryError(f"{ref}: file not found")


def serialize_inventory(inv: Inventory) -> str:
    lines = []
    for it in inv.items:
        row = {"id": it.id, "text": it.text, "trait": it.trait, "key": it.key}
        if it.facet is not None:
            row["facet"] = it.facet
        lines.append("  " + json.dumps(row, ensure_ascii=False))
    head = json.dumps({"schema_version": SCHEMA_VERSION, "name": inv.name})[:-1]
    return head + ', "items": [\n' + ",\n".join(lines) + "\n]}\n"


def items_per_trait(inv: Inventory) -> dict[str, int]:
    counts = Counter(it.trait for it in inv.items)
    return {t: counts.get(t, 0) for t in TRAITS}


def load_paraphrases(path, inv: Inventory) -> ParaphraseSet:
    doc = _read_json(path)
    name = doc.get("inventory", "")
    if inv.name and name and name != inv.name:
        raise InventoryError(f"{path}: paraphrases target {name!r}, inventory is {inv.name!r}")
    variants = {}
    for item_id, texts in (doc.get("variants") or {}).items():
        if item_id not in inv:
            raise InventoryError(f"{path}: unknown item id {item_id!r}")
        if not isinstance(texts, list) or not texts or not all(isinstance(t, str) and t.strip() for t in texts):
            raise InventoryError(f"{path}: item {item_id!r} needs at least one non-empty paraphrase")
        variants[item_id] = tuple(texts)
    return ParaphraseSet(inventory_name=name or inv.name, variants=variants)


def parse_pairs(doc: dict, inv: Inventory, source: str = "<pairs>") -> PairFile:
    kind = doc.get("kind")
    if kind not in PAIR_KINDS:
        raise InventoryError(f"{source}: unknown pair kind {kind!r}")
    pairs = []
    seen = set()
    for pos, pair in enumerate(doc.get("pairs") or [], start=1):
        if not isinstance(pair, list) or len(pair) != 2:
            raise InventoryError(f"{source}: row {pos} is not an [id, id] pair")
        a, b = (str(x) for x in pair)
        for item_id in (a, b):
            if item_id not in inv:
                raise InventoryError(f"{source}: row {pos}: unknown item id {item_id!r}")
        if a == b:
            raise InventoryError(f"{source}: row {pos}: self-pair ({a}, {a})")
        if (a, b) in seen or (b, a) in seen:
            raise InventoryError(f"{source}: row {pos}: repeated pair ({a}, {b})")
        seen.add((a, b))
        pairs.append((a, b))
    return PairFile(kind=kind, pairs=tuple(pairs))


def load_pairs(path, inv: Inventory) -> PairFile:
    return parse_pairs(_read_json(path), inv, source=str(path))


def serialize_pairs(pf: PairFile, inventory_name: str = "") -> str:
    rows = ",\n".join("  " + json.dumps(list(p)) for p in pf.pairs)
    head = {"schema_version": SCHEMA_VERSION, "kind": pf.kind}
    if inventory_name:
        head["inventory"] = inventory_name
    return json.dumps(head)[:-1] + ', "pairs": [\n' + rows + "\n]}\n"

