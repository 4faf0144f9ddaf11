"""Corpus ingestion and token counting.

Every budget decision downstream (chunk sizes, prompt limits, sample packing)
goes through a :class:`TokenCounter`, so the approximate mode has to be
near-additive over concatenation: ``count(a + b)`` never drifts more than one
token from ``count(a) + count(b)``.
"""

from __future__ import annotations

import json
import math
import shlex
import subprocess
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Iterator

from .errors import IngestError, RecordError

FORMAT_ALIASES = {
    "txt-dir": "txt-dir",
    "plain-text-dir": "txt-dir",
    "jsonl": "jsonl",
    "jsonl-text-field": "jsonl",
}


@dataclass(frozen=True)
class RawDocument:
    id: str
    text: str
    source_path: str


@dataclass(frozen=True)
class TokenCounter:
    """Counts tokens either by a chars-times-rate estimate or an external command.

    The external command receives the text on stdin and must print a single
    integer on stdout.
    """

    mode: str = "approximate"
    tokens_per_char: Fraction = Fraction(1, 4)
    command: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.mode not in ("approximate", "exact-external"):
            raise ValueError(f"unknown token counter mode {self.mode!r}")
        if self.mode == "approximate":
            rate = Fraction(self.tokens_per_char)
            if rate <= 0:
                raise ValueError("tokens_per_char must be positive")
            object.__setattr__(self, "tokens_per_char", rate)
        elif not self.command:
            raise ValueError("exact-external mode needs a command")

    @classmethod
    def from_spec(cls, spec: str) -> "TokenCounter":
        """Parse the CLI form: ``approx``, ``approx:<rate>`` or ``cmd:<exe ...>``."""
        if spec == "approx":
            return cls()
        if spec.startswith("approx:"):
            return cls(tokens_per_char=Fraction(spec.split(":", 1)[1]))
        if spec.startswith("cmd:"):
            return cls(mode="exact-external", command=tuple(shlex.split(spec[4:])))
        raise ValueError(f"bad tokenizer spec {spec!r}; expected approx or cmd:<exe>")

    def count(self, text: str) -> int:
        if not text:
            return 0
        if self.mode == "approximate":
            return math.ceil(len(text) * self.tokens_per_char)
        return _external_count(self.command, text)

    def fit_prefix(self, text: str, max_tokens: int) -> int:
        """Length in characters of the longest prefix of ``text`` within ``max_tokens``."""
        if max_tokens <= 0:
            return 0
        if self.mode == "approximate":
            return min(len(text), math.floor(max_tokens / self.tokens_per_char))
        if self.count(text) <= max_tokens:
            return len(text)
        lo, hi = 0, len(text)
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self.count(text[:mid]) <= max_tokens:
                lo = mid
            else:
                hi = mid - 1
        return lo


@lru_cache(maxsize=65536)
def _external_count(command: tuple[str, ...], text: str) -> int:
    proc = subprocess.run(
        list(command), input=text.encode("utf-8"), capture_output=True, check=True
    )
    return int(proc.stdout.decode().strip())


def count_tokens(counter: TokenCounter, text: str) -> int:
    return counter.count(text)


def ingest(
    path: str | Path,
    fmt: str = "txt-dir",
    *,
    errors: list[RecordError] | None = None,
    text_field: str = "text",
) -> Iterator[RawDocument]:
    """Stream documents from a directory of ``.txt`` files or a JSONL file.

    Order is deterministic: sorted relative paths for directories, line order
    for JSONL. Ids are derived from path and line number, never from content.
    Bad records are skipped and appended to ``errors`` when given.
    """
    try:
        kind = FORMAT_ALIASES[fmt]
    except KeyError:
        raise IngestError(f"unknown corpus format {fmt!r}") from None
    root = Path(path)
    if not root.exists():
        raise IngestError(f"{root} does not exist")
    if kind == "txt-dir":
        yield from _ingest_dir(root, errors)
    else:
        yield from _ingest_jsonl(root, text_field, errors)


def _record_error(errors: list[RecordError] | None, source: str, reason: str) -> None:
    if errors is not None:
        errors.append(RecordError(source, reason))


def _ingest_dir(root: Path, errors: list[RecordError] | None) -> Iterator[RawDocument]:
    if not root.is_dir():
        raise IngestError(f"{root} is not a directory")
    try:
        files = sorted(p for p in root.rglob("*.txt") if p.is_file())
    except OSError as exc:
        raise IngestError(f"cannot list {root}: {exc}") from exc
    for p in files:
        rel = p.relative_to(root).as_posix()
        try:
            text = p.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            _record_error(errors, rel, str(exc))
            continue
        if not text.strip():
            _record_error(errors, rel, "empty document")
            continue
        yield RawDocument(id=rel, text=text, source_path=str(p))


def _ingest_jsonl(
    root: Path, text_field: str, errors: list[RecordError] | None
) -> Iterator[RawDocument]:
    try:
        fh = root.open("r", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read {root}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            source = f"{root.name}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                _record_error(errors, source, f"invalid JSON: {exc.msg}")
                continue
            text = obj.get(text_field) if isinstance(obj, dict) else None
            if not isinstance(text, str):
                _record_error(errors, source, f"missing string field {text_field!r}")
                continue
            if not text.strip():
                _record_error(errors, source, "empty document")
                continue
            yield RawDocument(id=source, text=text, source_path=str(root))
