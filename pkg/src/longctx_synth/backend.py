"""Text-in/text-out generator backends.

Two implementations share one contract: :class:`HttpBackend` posts
chat-completions requests to a hosted model, :class:`MockBackend` produces
deterministic synthetic text so the whole pipeline runs offline. Both route
every call through an :class:`InFlightGate`, which caps and records the number
of outstanding requests.
"""

from __future__ import annotations

import ast
import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from dataclasses import dataclass
from typing import Protocol

import httpx

from .corpus import TokenCounter
from .errors import BackendUnavailable, MalformedGeneration, PromptTooLong

log = logging.getLogger(__name__)

API_KEY_ENV = "LONGCTX_API_KEY"
DEFAULT_QA_TEMPERATURE = 0.7
DEFAULT_SUMMARY_TEMPERATURE = 0.3
TAGS = ("summary", "qa")


@dataclass(frozen=True)
class GenRequest:
    prompt: str
    max_output_tokens: int = 1024
    temperature: float = DEFAULT_QA_TEMPERATURE
    tag: str = "qa"

    def __post_init__(self) -> None:
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.tag not in TAGS:
            raise ValueError(f"tag must be one of {TAGS}")


@dataclass(frozen=True)
class BackendConfig:
    endpoint_url: str = "http://localhost:8000/v1/chat/completions"
    model_name: str = "Qwen/Qwen2-72B-Instruct"
    max_in_flight: int = 32
    retries: int = 3
    timeout: float = 120.0
    context_limit_tokens: int = 32768
    backoff_base: float = 1.0

    def __post_init__(self) -> None:
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")


@dataclass(frozen=True)
class QAExtraction:
    question: str
    answer: str


class InFlightGate:
    """Bounded semaphore that also tracks current and peak occupancy."""

    def __init__(self, limit: int):
        if limit < 1:
            raise ValueError("limit must be >= 1")
        self.limit = limit
        self._sem = threading.BoundedSemaphore(limit)
        self._lock = threading.Lock()
        self.current = 0
        self.peak = 0
        self.total = 0

    def __enter__(self) -> "InFlightGate":
        self._sem.acquire()
        with self._lock:
            self.current += 1
            self.total += 1
            self.peak = max(self.peak, self.current)
        return self

    def __exit__(self, *exc: object) -> None:
        with self._lock:
            self.current -= 1
        self._sem.release()


class Backend(Protocol):
    counter: TokenCounter

    def generate(self, req: GenRequest) -> str: ...


class _GatedBackend:
    def __init__(self, config: BackendConfig, counter: TokenCounter | None, gate: InFlightGate | None):
        self.config = config
        self.counter = counter or TokenCounter()
        self.gate = gate or InFlightGate(config.max_in_flight)

    def check_fits(self, req: GenRequest) -> None:
        n = self.counter.count(req.prompt)
        if n + req.max_output_tokens > self.config.context_limit_tokens:
            raise PromptTooLong(n, req.max_output_tokens, self.config.context_limit_tokens)

    def generate(self, req: GenRequest) -> str:
        self.check_fits(req)
        with self.gate:
            return self._complete(req)

    def _complete(self, req: GenRequest) -> str:
        raise NotImplementedError


class HttpBackend(_GatedBackend):
    """OpenAI-style chat-completions client with retries and exponential backoff."""

    def __init__(
        self,
        config: BackendConfig,
        counter: TokenCounter | None = None,
        gate: InFlightGate | None = None,
        api_key: str | None = None,
        client: httpx.Client | None = None,
    ):
        super().__init__(config, counter, gate)
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = client or httpx.Client(timeout=config.timeout, headers=headers)

    def payload(self, req: GenRequest) -> dict:
        return {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        }

    def _complete(self, req: GenRequest) -> str:
        last: Exception | None = None
        for attempt in range(self.config.retries + 1):
            if attempt:
                time.sleep(self.config.backoff_base * 2 ** (attempt - 1))
            try:
                resp = self._client.post(self.config.endpoint_url, json=self.payload(req))
            except httpx.TransportError as exc:
                last = exc
                log.warning("request failed (attempt %d): %r", attempt + 1, exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = RuntimeError(f"HTTP {resp.status_code}")
                log.warning("server returned %d (attempt %d)", resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise BackendUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendUnavailable(f"unexpected response shape: {exc!r}") from exc
        raise BackendUnavailable(f"gave up after {self.config.retries + 1} attempts: {last!r}")

    def close(self) -> None:
        self._client.close()


# -- mock ---------------------------------------------------------------------

_SYLLABLES = (
    "ka ro mi sen tal vor lu bex dra mon phi sta ne qua rel tor "
    "ven ash lo pri gan ev ith ul mar co sel dun"
).split()


def _hash(seed: int, req: GenRequest) -> str:
    h = hashlib.sha256(f"{seed}\x00{req.tag}\x00{req.prompt}".encode("utf-8"))
    return h.hexdigest()[:12]


def _words(rng: random.Random, n: int) -> list[str]:
    sizes = rng.choices((1, 2, 3), k=n)
    syl = iter(rng.choices(_SYLLABLES, k=sum(sizes)))
    return ["".join(next(syl) for _ in range(k)) for k in sizes]


def _fit(text: str, counter: TokenCounter, max_tokens: int) -> str:
    if counter.count(text) <= max_tokens:
        return text
    return text[: counter.fit_prefix(text, max_tokens)]


def mock_generate(
    seed: int,
    req: GenRequest,
    counter: TokenCounter | None = None,
    overrun_words: int | None = None,
) -> str:
    """Deterministic stand-in for a model completion.

    Summaries are a few sentences tagged with a hash of the prompt; QA
    completions are a valid JSON object whose question and answer both carry
    that hash. ``overrun_words`` forces a summary of exactly that many words,
    ignoring ``max_output_tokens``, to imitate a model that ignores its limit.
    """
    counter = counter or TokenCounter()
    h = _hash(seed, req)
    rng = random.Random(int(h, 16))
    if req.tag == "summary":
        if overrun_words is not None:
            words = _words(rng, overrun_words)
            sents = [" ".join(words[i : i + 10]) + "." for i in range(0, len(words), 10)]
            return " ".join(sents)
        budget = max(1, int(req.max_output_tokens * rng.uniform(0.45, 0.75)))
        text = f"Summary {h}."
        while counter.count(text) < budget:
            text += " " + " ".join(_words(rng, rng.randint(8, 16))).capitalize() + "."
        return _fit(text, counter, req.max_output_tokens)
    q = f"[{h}] " + " ".join(_words(rng, rng.randint(10, 24))) + "?"
    a = f"[{h}] " + " ".join(_words(rng, rng.randint(20, 90))) + "."
    # shrink the answer until the JSON fits the output budget
    while True:
        out = json.dumps({"question": q, "answer": a})
        if counter.count(out) <= req.max_output_tokens or len(a) <= 20:
            return out
        a = a[: len(a) * 3 // 4]


class MockBackend(_GatedBackend):
    """Offline backend with optional latency, failure injection and a call log."""

    def __init__(
        self,
        seed: int = 0,
        config: BackendConfig | None = None,
        counter: TokenCounter | None = None,
        gate: InFlightGate | None = None,
        latency: float = 0.0,
        overrun_words: int | None = None,
        fail_after: int | None = None,
        malformed_every: int | None = None,
        record: bool = False,
    ):
        super().__init__(config or BackendConfig(), counter, gate)
        self.seed = seed
        self.latency = latency
        self.overrun_words = overrun_words
        self.fail_after = fail_after
        self.malformed_every = malformed_every
        self.record = record
        self.calls: list[GenRequest] = []
        self._n = 0
        self._lock = threading.Lock()

    @property
    def n_calls(self) -> int:
        return self._n

    def _complete(self, req: GenRequest) -> str:
        with self._lock:
            self._n += 1
            n = self._n
            if self.record:
                self.calls.append(req)
        if self.fail_after is not None and n > self.fail_after:
            raise BackendUnavailable("mock backend outage")
        if self.latency:
            time.sleep(self.latency)
        if self.malformed_every and req.tag == "qa" and n % self.malformed_every == 0:
            return "I am sorry, I cannot produce JSON right now."
        return mock_generate(self.seed, req, self.counter, self.overrun_words)


# -- structured answer extraction -----------------------------------------------

_FENCE = re.compile(r"^\s*```[a-zA-Z0-9_-]*\s*\n?(.*?)\n?\s*```\s*$", re.DOTALL)
_FIELD = r"""["']{name}["']\s*:\s*(?:"((?:[^"\\]|\\.)*)"|'((?:[^'\\]|\\.)*)')"""


def _as_qa(obj: object) -> QAExtraction | None:
    if not isinstance(obj, dict):
        return None
    q, a = obj.get("question"), obj.get("answer")
    if isinstance(q, str) and isinstance(a, str) and q.strip() and a.strip():
        return QAExtraction(q.strip(), a.strip())
    return None


def _loads(text: str) -> QAExtraction | None:
    try:
        return _as_qa(json.loads(text))
    except (ValueError, TypeError):
        return None


def _literal(text: str) -> QAExtraction | None:
    # python-dict-style output with single quotes, as the prompts themselves show
    try:
        return _as_qa(ast.literal_eval(text))
    except (ValueError, SyntaxError, MemoryError, RecursionError):
        return None


def _unescape(s: str) -> str:
    try:
        return json.loads(f'"{s}"')
    except ValueError:
        return s


def extract_qa(raw: str) -> QAExtraction:
    """Parse a question/answer pair out of a model completion.

    Tries strict JSON, then a repair ladder: strip code fences, normalise
    single quotes, slice from the first ``{`` to the last ``}``, and finally
    pull the two fields out with a regex. Raises :class:`MalformedGeneration`
    if every step fails.
    """
    text = raw.strip()
    found = _loads(text)
    if found:
        return found
    m = _FENCE.match(text)
    if m:
        text = m.group(1).strip()
        found = _loads(text)
        if found:
            return found
    found = _literal(text) or _loads(text.replace("'", '"'))
    if found:
        return found
    lo, hi = text.find("{"), text.rfind("}")
    if 0 <= lo < hi:
        sliced = text[lo : hi + 1]
        found = _loads(sliced) or _literal(sliced) or _loads(sliced.replace("'", '"'))
        if found:
            return found
    fields = {}
    for name in ("question", "answer"):
        fm = re.search(_FIELD.format(name=name), text, re.DOTALL)
        if fm:
            fields[name] = _unescape(fm.group(1)) if fm.group(1) is not None else fm.group(2)
    found = _as_qa(fields)
    if found:
        return found
    raise MalformedGeneration(raw)
