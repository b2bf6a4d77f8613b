"""Chat backends: live HTTP APIs, scripted respondents, record/replay cassettes.

Every backend exposes ``model_id`` and ``chat(messages, params) -> str``.
Backends are described by short spec strings::

    constant:A
    history-majority[:fallback=C]
    noisy:p=0.1,seed=3[,table=answers.json]
    replay:path/to/cassette.jsonl
    http:<provider>          (provider entry from a providers config file)
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import httpx
import numpy as np

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
KINDS = ("http-chat", "constant", "history-majority", "noisy-table", "replay")
LETTERS = "ABCDE"
_LETTER = re.compile(r"\(\s*([A-E])\s*\)|(?<![A-Za-z])([A-E])(?![A-Za-z'])")


class BackendError(RuntimeError):
    pass


class AuthError(BackendError):
    pass


class RateLimitExhausted(BackendError):
    pass


class TransportError(BackendError):
    pass


class MalformedResponse(BackendError):
    pass


class CassetteMiss(BackendError):
    def __init__(self, request_hash: str):
        super().__init__(f"no cassette entry for request hash {request_hash}")
        self.request_hash = request_hash


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.role != "system" and not self.content:
            raise ValueError(f"{self.role} message must have content")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.0
    seed: int | None = None
    max_tokens: int = 16

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BackendSpec:
    kind: str
    model: str = ""
    endpoint: str = ""
    credential_env: str = ""
    cassette: str = ""
    options: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind == "http-chat" and not (self.endpoint and self.model):
            raise ValueError("http-chat backends need an endpoint and a model")
        if self.kind == "replay" and not self.cassette:
            raise ValueError("replay backends need a cassette path")

    def option(self, name: str, default=None):
        return dict(self.options).get(name, default)


def request_hash(model: str, messages: Sequence[ChatMessage], params: GenerationParams) -> str:
    body = {
        "model": model,
        "messages": [m.to_dict() for m in messages],
        "params": params.to_dict(),
    }
    blob = json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _check_messages(messages: Sequence[ChatMessage]) -> None:
    if not messages:
        raise ValueError("chat needs at least one message")
    if messages[-1].role != "user":
        raise ValueError("the last message must come from the user")


class Backend:
    model_id = "backend"

    def chat(self, messages: Sequence[ChatMessage], params: GenerationParams) -> str:
        _check_messages(messages)
        return self._reply(list(messages), params)

    def _reply(self, messages: list[ChatMessage], params: GenerationParams) -> str:
        raise NotImplementedError


class ConstantBackend(Backend):
    def __init__(self, option: str = "A"):
        self.option = option
        self.model_id = f"constant:{option}"

    def _reply(self, messages, params):
        return self.option


def letter_in(text: str) -> str | None:
    m = _LETTER.search(text)
    return (m.group(1) or m.group(2)) if m else None


class HistoryMajorityBackend(Backend):
    """Answers with the most frequent letter among prior assistant turns.

    Ties go to the letter seen most recently; the first turn gets ``fallback``.
    """

    def __init__(self, fallback: str = "A"):
        self.fallback = fallback
        self.model_id = f"history-majority:{fallback}"

    def _reply(self, messages, params):
        seen = [letter_in(m.content) for m in messages if m.role == "assistant"]
        seen = [s for s in seen if s]
        if not seen:
            return self.fallback
        counts = Counter(seen)
        top = max(counts.values())
        for letter in reversed(seen):
            if counts[letter] == top:
                return letter
        return self.fallback  # pragma: no cover


def _digest_int(*parts) -> int:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "little")


class NoisyTableBackend(Backend):
    """Base answer per item, flipped to an adjacent option with probability ``p``.

    The base answer comes from ``table`` (item text -> semantic index) when the
    prompt contains a listed text; otherwise it is a hash of the prompt.  The
    flip draw is seeded by (backend seed, params.seed, prompt), so identical
    calls give identical replies.
    """

    def __init__(self, p: float = 0.0, seed: int = 0, table: dict[str, int] | None = None,
                 labels: str = LETTERS):
        if not 0.0 <= p <= 1.0:
            raise ValueError("flip probability must lie in [0, 1]")
        self.p = p
        self.seed = seed
        self.labels = labels
        # longest texts first so "trust others" does not shadow "distrust others"
        self.table = sorted((table or {}).items(), key=lambda kv: -len(kv[0]))
        self.model_id = f"noisy-table:p={p},seed={seed}"

    def base_index(self, prompt: str) -> int:
        low = prompt.lower()
        for text, idx in self.table:
            if text.lower() in low:
                return int(idx)
        return _digest_int("base", self.seed, prompt) % len(self.labels)

    def _reply(self, messages, params):
        prompt = messages[-1].content
        idx = self.base_index(prompt)
        rng = np.random.default_rng(_digest_int("flip", self.seed, params.seed, prompt))
        if rng.random() < self.p:
            steps = [s for s in (-1, 1) if 0 <= idx + s < len(self.labels)]
            idx += steps[int(rng.integers(len(steps)))]
        return self.labels[idx]


class FunctionBackend(Backend):
    """Wraps a plain ``fn(messages, params) -> str``."""

    def __init__(self, fn: Callable, model_id: str = "function"):
        self.fn = fn
        self.model_id = model_id

    def _reply(self, messages, params):
        return self.fn(messages, params)


class RecordingBackend(Backend):
    """Passes calls through and appends each exchange to a JSONL cassette."""

    def __init__(self, inner: Backend, path, *, timestamps: bool = True):
        self.inner = inner
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.timestamps = timestamps
        self.model_id = inner.model_id
        self._lock = threading.Lock()

    def _reply(self, messages, params):
        reply = self.inner.chat(messages, params)
        entry = {
            "hash": request_hash(self.model_id, messages, params),
            "request": {
                "model": self.model_id,
                "messages": [m.to_dict() for m in messages],
                "params": params.to_dict(),
            },
            "response": {"content": reply},
            "timestamp": time.time() if self.timestamps else None,
        }
        line = json.dumps(entry, ensure_ascii=False, sort_keys=True)
        with self._lock, self.path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")
        return reply


class ReplayBackend(Backend):
    """Serves recorded replies by request hash; never falls back to a live call.

    Repeated identical requests are served in recorded order; once exhausted
    the last recorded reply is repeated.
    """

    def __init__(self, path, model: str | None = None):
        self.path = Path(path)
        if not self.path.exists():
            raise BackendError(f"cassette {self.path} does not exist")
        self._entries: dict[str, list[str]] = defaultdict(list)
        models = []
        with self.path.open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                self._entries[rec["hash"]].append(rec["response"]["content"])
                models.append(rec.get("request", {}).get("model", ""))
        distinct = sorted(set(models))
        if model is None:
            if len(distinct) > 1:
                raise BackendError(f"cassette {self.path} mixes models {distinct}; pass model=")
            model = distinct[0] if distinct else ""
        self.model_id = model
        self._served: Counter = Counter()
        self._lock = threading.Lock()

    def _reply(self, messages, params):
        h = request_hash(self.model_id, messages, params)
        replies = self._entries.get(h)
        if not replies:
            raise CassetteMiss(h)
        with self._lock:
            k = self._served[h]
            self._served[h] += 1
        return replies[min(k, len(replies) - 1)]


@dataclass(frozen=True)
class ProviderConfig:
    name: str
    endpoint: str
    model: str
    api_key_env: str = ""
    auth_header: str = "Authorization"
    auth_prefix: str = "Bearer "
    role_map: dict = field(default_factory=dict)
    temperature_path: str = "temperature"
    seed_path: str = "seed"
    max_tokens_path: str = "max_tokens"
    response_path: str = "choices.0.message.content"
    extra_body: dict = field(default_factory=dict)
    max_attempts: int = 6
    backoff_base: float = 1.0
    backoff_max: float = 30.0
    timeout: float = 60.0
    max_in_flight: int = 4
    requests_per_minute: float = 0.0


def load_providers(path) -> dict[str, ProviderConfig]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    out = {}
    for name, cfg in doc.get("providers", {}).items():
        out[name] = ProviderConfig(name=name, **cfg)
    return out


def _set_path(body: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = body
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def _get_path(doc, dotted: str):
    node = doc
    for p in dotted.split("."):
        if isinstance(node, list):
            node = node[int(p)]
        else:
            node = node[p]
    return node


class RateLimiter:
    """Minimum spacing between request starts, shared across threads."""

    def __init__(self, per_minute: float, clock=time.monotonic, sleep=time.sleep):
        self.interval = 60.0 / per_minute if per_minute > 0 else 0.0
        self.clock = clock
        self.sleep = sleep
        self._next = 0.0
        self._lock = threading.Lock()

    def wait(self) -> None:
        if not self.interval:
            return
        with self._lock:
            now = self.clock()
            start = max(now, self._next)
            self._next = start + self.interval
        if start > now:
            self.sleep(start - now)


class HttpChatBackend(Backend):
    """OpenAI-style chat-completions client with bounded retries."""

    RETRY_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}

    def __init__(self, provider: ProviderConfig, *, client: httpx.Client | None = None,
                 sleep=time.sleep, rng: random.Random | None = None, env=None):
        self.provider = provider
        self.model_id = provider.model
        self.client = client or httpx.Client(timeout=provider.timeout)
        self.sleep = sleep
        self.rng = rng or random.Random(0)
        self.env = os.environ if env is None else env
        self.limiter = RateLimiter(provider.requests_per_minute, sleep=sleep)
        self._slots = threading.BoundedSemaphore(max(1, provider.max_in_flight))
        self.request_count = 0

    def build_body(self, messages, params) -> dict:
        roles = self.provider.role_map
        body = {"model": self.provider.model}
        body.update(json.loads(json.dumps(self.provider.extra_body)))
        body["messages"] = [{"role": roles.get(m.role, m.role), "content": m.content} for m in messages]
        _set_path(body, self.provider.temperature_path, params.temperature)
        if params.seed is not None and self.provider.seed_path:
            _set_path(body, self.provider.seed_path, params.seed)
        if self.provider.max_tokens_path:
            _set_path(body, self.provider.max_tokens_path, params.max_tokens)
        return body

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.provider.api_key_env:
            key = self.env.get(self.provider.api_key_env)
            if not key:
                raise AuthError(f"environment variable {self.provider.api_key_env} is not set")
            headers[self.provider.auth_header] = self.provider.auth_prefix + key
        return headers

    def _backoff(self, attempt: int) -> float:
        cap = min(self.provider.backoff_max, self.provider.backoff_base * 2 ** attempt)
        return self.rng.uniform(0.5 * cap, cap)

    def _reply(self, messages, params):
        body = self.build_body(messages, params)
        headers = self._headers()
        log.debug("request body: %s", json.dumps(body, ensure_ascii=False))
        last = None
        with self._slots:
            for attempt in range(self.provider.max_attempts):
                self.limiter.wait()
                self.request_count += 1
                try:
                    resp = self.client.post(self.provider.endpoint, json=body, headers=headers)
                except httpx.TransportError as exc:
                    last = TransportError(f"{type(exc).__name__}: {exc}")
                else:
                    if resp.status_code in (401, 403):
                        raise AuthError(f"HTTP {resp.status_code} from {self.provider.name}")
                    if resp.status_code == 429:
                        last = RateLimitExhausted(f"HTTP 429 after {attempt + 1} attempts")
                    elif resp.status_code in self.RETRY_STATUS:
                        last = TransportError(f"HTTP {resp.status_code} after {attempt + 1} attempts")
                    elif resp.status_code >= 400:
                        raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                    else:
                        log.debug("response body: %s", resp.text)
                        return self._extract(resp)
                if attempt + 1 < self.provider.max_attempts:
                    self.sleep(self._backoff(attempt))
        raise last

    def _extract(self, resp: httpx.Response) -> str:
        try:
            content = _get_path(resp.json(), self.provider.response_path)
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"cannot read {self.provider.response_path!r}: {exc}") from None
        if not isinstance(content, str):
            raise MalformedResponse(f"{self.provider.response_path!r} is not a string")
        return content


def parse_backend_spec(text: str, providers: dict[str, ProviderConfig] | None = None) -> BackendSpec:
    kind, _, rest = text.partition(":")
    kind = {"noisy": "noisy-table", "http": "http-chat", "majority": "history-majority"}.get(kind, kind)
    if kind == "constant":
        return BackendSpec(kind="constant", options=(("option", rest or "A"),))
    if kind == "replay":
        return BackendSpec(kind="replay", cassette=rest)
    if kind == "http-chat":
        if not providers or rest not in providers:
            raise ValueError(f"unknown provider {rest!r}; pass a providers config")
        p = providers[rest]
        return BackendSpec(kind="http-chat", model=p.model, endpoint=p.endpoint,
                           credential_env=p.api_key_env, options=(("provider", rest),))
    opts = []
    for part in filter(None, rest.split(",")):
        k, sep, v = part.partition("=")
        if not sep:
            raise ValueError(f"bad backend option {part!r} in {text!r}")
        opts.append((k.strip(), v.strip()))
    return BackendSpec(kind=kind, options=tuple(opts))


def make_backend(spec: BackendSpec | str, providers: dict[str, ProviderConfig] | None = None) -> Backend:
    if isinstance(spec, str):
        spec = parse_backend_spec(spec, providers)
    if spec.kind == "constant":
        return ConstantBackend(spec.option("option", "A"))
    if spec.kind == "history-majority":
        return HistoryMajorityBackend(spec.option("fallback", "A"))
    if spec.kind == "noisy-table":
        table = None
        if spec.option("table"):
            table = json.loads(Path(spec.option("table")).read_text(encoding="utf-8"))
        return NoisyTableBackend(float(spec.option("p", 0.0)), int(spec.option("seed", 0)), table)
    if spec.kind == "replay":
        return ReplayBackend(spec.cassette, spec.option("model"))
    provider = (providers or {}).get(spec.option("provider", ""))
    if provider is None:
        provider = ProviderConfig(name=spec.model, endpoint=spec.endpoint, model=spec.model,
                                  api_key_env=spec.credential_env)
    return HttpChatBackend(provider)


def record_replay(cassette) -> BackendSpec:
    """Replay spec for a recorded cassette."""
    if not Path(cassette).exists():
        raise BackendError(f"cassette {cassette} does not exist")
    return BackendSpec(kind="replay", cassette=str(cassette))


def chat(backend: Backend | BackendSpec | str, messages: Sequence[ChatMessage], params: GenerationParams) -> str:
    if not isinstance(backend, Backend):
        backend = make_backend(backend)
    return backend.chat(messages, params)
