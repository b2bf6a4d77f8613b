"""One questionnaire session: ordering, history regime, re-asks, transcripts.

A transcript is JSONL: the first line carries the run header (config
snapshot, validity, optional timing), each following line one answered item.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .backend import Backend, BackendError, ChatMessage, GenerationParams, make_backend
from .inventory import TRAITS, Inventory, ParaphraseSet, load_paraphrases, resolve_inventory
from .prompt import REASK_SUFFIX, ParseError, PromptVariant, load_variants, parse_choice, render_prompt
from .scoring import score_response

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
HISTORY_MODES = ("context-free", "context-dependent", "few-shot")
ORDERINGS = ("canonical", "random", "trait-grouped", "cyclic-rotation")


class SessionError(ValueError):
    pass


@dataclass(frozen=True)
class SessionConfig:
    run_id: str
    inventory: str = "mpi-120"
    variant: str = "default"
    backend: str = "constant:A"
    history_mode: str = "context-free"
    fewshot_k: int | None = None
    ordering: str = "canonical"
    order_seed: int = 0
    adversarial: int | None = None
    persona: str | None = None
    params: GenerationParams = field(default_factory=GenerationParams)
    paraphrase_version: int = 0
    paraphrases: str | None = None
    variants_file: str | None = None
    factor: str = ""

    def __post_init__(self):
        if not self.run_id:
            raise SessionError("run_id must be non-empty")
        if self.history_mode not in HISTORY_MODES:
            raise SessionError(f"unknown history mode {self.history_mode!r}")
        if self.history_mode == "few-shot" and (self.fewshot_k is None or self.fewshot_k < 1):
            raise SessionError("few-shot mode needs k >= 1")
        if self.ordering not in ORDERINGS:
            raise SessionError(f"unknown ordering {self.ordering!r}")
        if self.adversarial is not None and self.adversarial not in range(5):
            raise SessionError(f"adversarial option {self.adversarial} is not a semantic index 0..4")
        if self.paraphrase_version < 0:
            raise SessionError("paraphrase_version must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = self.params.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SessionConfig":
        d = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        d["params"] = GenerationParams(**d.get("params", {}))
        return cls(**d)


@dataclass(frozen=True)
class TranscriptEntry:
    presentation_index: int
    item_id: str
    prompt_text: str
    raw_reply: str | None
    semantic_index: int | None
    presented_label: str | None
    score: int | None
    reasked: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Transcript:
    run_id: str
    config: dict
    entries: list[TranscriptEntry] = field(default_factory=list)
    valid: bool = True
    error: str | None = None
    timing: dict | None = None

    def header(self) -> dict:
        return {
            "kind": "transcript",
            "schema_version": SCHEMA_VERSION,
            "run_id": self.run_id,
            "valid": self.valid,
            "error": self.error,
            "config": self.config,
            "timing": self.timing,
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps(self.header(), ensure_ascii=False, sort_keys=True)]
        lines += [json.dumps(e.to_dict(), ensure_ascii=False, sort_keys=True) for e in self.entries]
        return "\n".join(lines) + "\n"

    def save(self, path) -> Path:
        return atomic_write(path, self.to_jsonl())

    @property
    def factor(self) -> str:
        return self.config.get("session", {}).get("factor", "")


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def load_transcript(path) -> Transcript:
    path = Path(path)
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise SessionError(f"{path}: empty transcript")
    head = json.loads(lines[0])
    if head.get("kind") != "transcript":
        raise SessionError(f"{path}: first line is not a transcript header")
    if head.get("schema_version") != SCHEMA_VERSION:
        raise SessionError(f"{path}: unsupported schema_version {head.get('schema_version')!r}")
    entries = [TranscriptEntry(**json.loads(ln)) for ln in lines[1:]]
    return Transcript(
        run_id=head["run_id"],
        config=head["config"],
        entries=entries,
        valid=head["valid"],
        error=head.get("error"),
        timing=head.get("timing"),
    )


def order_items(inv: Inventory, ordering: str = "canonical", seed: int = 0) -> list[str]:
    ids = list(inv.ids)
    if ordering == "canonical":
        return ids
    if ordering == "random":
        # explicit Fisher-Yates so the permutation is pinned to this RNG stream
        rng = np.random.default_rng(seed)
        out = list(ids)
        for i in range(len(out) - 1, 0, -1):
            j = int(rng.integers(i + 1))
            out[i], out[j] = out[j], out[i]
        return out
    by_trait = {t: [it.id for it in inv.items if it.trait == t] for t in TRAITS}
    if ordering == "trait-grouped":
        return [i for t in TRAITS for i in by_trait[t]]
    if ordering == "cyclic-rotation":
        out, depth = [], 0
        while len(out) < len(ids):
            out += [by_trait[t][depth] for t in TRAITS if depth < len(by_trait[t])]
            depth += 1
        return out
    raise SessionError(f"unknown ordering {ordering!r}")


def build_history(prior: Sequence[TranscriptEntry], config: SessionConfig, prompt: str,
                  variant: PromptVariant | None = None) -> list[ChatMessage]:
    """Messages sent for the current question given the answered ones."""
    msgs = [ChatMessage("system", config.persona)] if config.persona else []
    if config.history_mode == "context-dependent":
        window = list(prior)
    elif config.history_mode == "few-shot":
        window = list(prior)[-config.fewshot_k:] if prior else []
    else:
        window = []
    forced = None
    if config.adversarial is not None and window:
        if variant is None:
            raise SessionError("adversarial rewriting needs the current variant")
        forced = variant.option_text(config.adversarial)
    for e in window:
        msgs.append(ChatMessage("user", e.prompt_text))
        msgs.append(ChatMessage("assistant", forced if forced is not None else (e.raw_reply or "")))
    msgs.append(ChatMessage("user", prompt))
    return msgs


def derive_seed(master: int, run_id: str) -> int:
    h = hashlib.sha256(f"{master}:{run_id}".encode("utf-8")).digest()
    return int.from_bytes(h[:4], "little") & 0x7FFFFFFF


@dataclass
class Resources:
    """Pre-resolved inventory, variants, backend and paraphrases for a run."""

    inventory: Inventory
    variant: PromptVariant
    backend: Backend
    paraphrases: ParaphraseSet | None = None

    @classmethod
    def resolve(cls, config: SessionConfig, backend: Backend | None = None, providers=None) -> "Resources":
        inv = resolve_inventory(config.inventory)
        variant = load_variants(config.variants_file).get(config.variant)
        para = load_paraphrases(config.paraphrases, inv) if config.paraphrases else None
        return cls(inv, variant, backend or make_backend(config.backend, providers), para)


def _ask(backend: Backend, msgs: list[ChatMessage], params: GenerationParams, variant: PromptVariant):
    reply = backend.chat(msgs, params)
    try:
        return parse_choice(reply, variant), reply, False
    except ParseError:
        pass
    retry = msgs + [ChatMessage("assistant", reply or " "), ChatMessage("user", REASK_SUFFIX)]
    reply = backend.chat(retry, params)
    try:
        return parse_choice(reply, variant), reply, True
    except ParseError:
        return None, reply, True


def run_session(config: SessionConfig, resources: Resources | None = None, *,
                out_path=None, deterministic: bool = True) -> Transcript:
    res = resources or Resources.resolve(config)
    inv, variant, backend = res.inventory, res.variant, res.backend
    snapshot = {
        "session": config.to_dict(),
        "inventory_name": inv.name,
        "model_id": backend.model_id,
        "variant": variant.to_dict(),
    }
    tr = Transcript(run_id=config.run_id, config=snapshot)
    started = time.time()
    order = order_items(inv, config.ordering, config.order_seed)
    for t, item_id in enumerate(order, start=1):
        item = inv.get(item_id)
        text = res.paraphrases.text_for(item, config.paraphrase_version) if res.paraphrases else item.text
        prompt = render_prompt(text, variant)
        msgs = build_history(tr.entries, config, prompt, variant)
        try:
            choice, reply, reasked = _ask(backend, msgs, config.params, variant)
        except BackendError as exc:
            tr.valid = False
            tr.error = f"{type(exc).__name__} at item {t} ({item_id}): {exc}"
            log.warning("run %s aborted: %s", config.run_id, tr.error)
            break
        if choice is None:
            tr.valid = False
            tr.error = tr.error or f"unparseable reply at item {t} ({item_id})"
            tr.entries.append(TranscriptEntry(t, item_id, prompt, reply, None, None, None, reasked))
            continue
        tr.entries.append(TranscriptEntry(
            t, item_id, prompt, reply, choice.semantic_index, choice.presented_label,
            score_response(item, choice), reasked,
        ))
    if len(tr.entries) != len(order):
        tr.valid = False
    if not deterministic:
        tr.timing = {"started": started, "finished": time.time()}
    if out_path is not None:
        tr.save(out_path)
    return tr


def expand_runs(configs: Sequence[SessionConfig], runs_per_config: int = 1,
                master_seed: int = 0) -> list[SessionConfig]:
    """Replicate configs and fill per-run generation seeds from (master seed, run_id)."""
    if runs_per_config < 1:
        raise SessionError("runs_per_config must be >= 1")
    out = []
    for cfg in configs:
        for r in range(runs_per_config):
            run_id = cfg.run_id if runs_per_config == 1 else f"{cfg.run_id}-r{r + 1}"
            seed = cfg.params.seed if cfg.params.seed is not None else derive_seed(master_seed, run_id)
            out.append(replace(cfg, run_id=run_id, params=replace(cfg.params, seed=seed)))
    ids = [c.run_id for c in out]
    if len(set(ids)) != len(ids):
        raise SessionError(f"duplicate run ids: {sorted({i for i in ids if ids.count(i) > 1})}")
    return out


def run_batch(configs: Sequence[SessionConfig], runs_per_config: int = 1, *, master_seed: int = 0,
              out_dir=None, jobs: int = 1, deterministic: bool = True, backend: Backend | None = None,
              providers=None) -> list[Transcript]:
    """Run independent sessions, optionally in parallel; results keep input order.

    A run that fails to start (bad refs) still yields an invalid transcript so
    sibling runs are unaffected.
    """
    runs = expand_runs(configs, runs_per_config, master_seed)
    shared: dict[str, Backend] = {}

    def one(cfg: SessionConfig) -> Transcript:
        path = Path(out_dir) / f"{cfg.run_id}.jsonl" if out_dir is not None else None
        try:
            be = backend or shared.get(cfg.backend)
            res = Resources.resolve(cfg, be, providers)
            return run_session(cfg, res, out_path=path, deterministic=deterministic)
        except Exception as exc:  # noqa: BLE001 - isolate sibling runs
            tr = Transcript(cfg.run_id, {"session": cfg.to_dict()}, valid=False,
                            error=f"{type(exc).__name__}: {exc}")
            if path is not None:
                tr.save(path)
            return tr

    # one backend object per spec so replay counters and HTTP limits are shared
    if backend is None:
        for cfg in runs:
            if cfg.backend not in shared:
                try:
                    shared[cfg.backend] = make_backend(cfg.backend, providers)
                except Exception:  # noqa: BLE001 - reported per run below
                    pass
    if jobs <= 1:
        return [one(c) for c in runs]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, runs))
