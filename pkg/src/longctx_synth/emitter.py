"""JSONL dataset writing, validation and summary statistics.

Each line is ``{"conversations": [...], "meta": {...}}``. The conversations
list is the plain role/content chat format; everything else (loss mask, kind
counts, per-pair provenance) lives under ``meta`` so the records remain usable
by trainers that only read ``conversations``.
"""

from __future__ import annotations

import json
import os
import statistics
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .composer import TrainingSample

ENCODING = "utf-8"


@dataclass
class DatasetRecord:
    conversations: list[dict]
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_sample(cls, sample: TrainingSample, seed: int | None = None) -> "DatasetRecord":
        conversations = [{"role": t.role, "content": t.content} for t in sample.turns]
        meta = {
            "source_doc_ids": list(sample.source_doc_ids),
            "token_count": sample.token_count,
            "target_tokens": sample.target_tokens,
            "seed": seed,
            "policy_name": sample.policy_name,
            "include_summary": sample.include_summary,
            "qa_kind_counts": dict(sorted(sample.qa_kind_counts.items())),
            "loss_mask": [0 if t.loss_masked else 1 for t in sample.turns],
            "pair_kinds": list(sample.pair_kinds),
            "pair_docs": list(sample.pair_docs),
            "pair_items": list(sample.pair_items),
            "doc_intro": list(sample.doc_intro),
            "parse_failures": sample.parse_failures,
            **sample.report.to_dict(),
        }
        return cls(conversations, meta)

    def to_json(self) -> str:
        return json.dumps({"conversations": self.conversations, "meta": self.meta}, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "DatasetRecord":
        obj = json.loads(line)
        return cls(obj["conversations"], obj.get("meta", {}))


def manifest_path(out_path: str | Path) -> Path:
    out_path = Path(out_path)
    return out_path.with_name(out_path.stem + ".manifest.json")


def write_dataset(
    samples: Iterable[TrainingSample | DatasetRecord],
    out_path: str | Path,
    *,
    seed: int | None = None,
    policy: str | None = None,
    extra: dict | None = None,
) -> dict:
    """Write records as JSONL and a manifest next to it; return the manifest.

    Writes go to a temporary file that replaces ``out_path`` only on success,
    so a failure leaves no partial dataset behind.
    """
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{out_path.name}.", dir=out_path.parent)
    n = 0
    try:
        with os.fdopen(fd, "w", encoding=ENCODING, newline="\n") as fh:
            for s in samples:
                rec = s if isinstance(s, DatasetRecord) else DatasetRecord.from_sample(s, seed)
                fh.write(rec.to_json())
                fh.write("\n")
                n += 1
        os.replace(tmp, out_path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    manifest = {"file": out_path.name, "records": n, "seed": seed, "policy": policy}
    if extra:
        manifest.update(extra)
    manifest_path(out_path).write_text(json.dumps(manifest, indent=2) + "\n", encoding=ENCODING)
    return manifest


def read_dataset(path: str | Path) -> list[DatasetRecord]:
    with open(path, encoding=ENCODING) as fh:
        return [DatasetRecord.from_json(line) for line in fh if line.strip()]


@dataclass(frozen=True)
class Violation:
    line: int
    code: str
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: [{self.code}] {self.message}"


def check_record(obj: object, line: int = 0) -> list[Violation]:
    """All rule violations for one parsed record."""
    out: list[Violation] = []

    def bad(code: str, msg: str) -> None:
        out.append(Violation(line, code, msg))

    if not isinstance(obj, dict) or not isinstance(obj.get("conversations"), list):
        bad("schema", "record must be an object with a 'conversations' list")
        return out
    conv = obj["conversations"]
    for i, turn in enumerate(conv):
        if (
            not isinstance(turn, dict)
            or turn.get("role") not in ("user", "assistant")
            or not isinstance(turn.get("content"), str)
        ):
            bad("schema", f"turn {i} must have role user/assistant and string content")
            return out
    roles = [t["role"] for t in conv]
    for i, role in enumerate(roles):
        want = "user" if i % 2 == 0 else "assistant"
        if role != want:
            bad("alternation", f"turn {i} is {role}, expected {want}")
            break
    if len(roles) % 2:
        bad("alternation", "conversation ends on a user turn")

    meta = obj.get("meta")
    if meta is None:
        return out
    if not isinstance(meta, dict):
        bad("schema", "meta must be an object")
        return out
    mask = meta.get("loss_mask")
    if mask is not None:
        expected = [0 if r == "user" else 1 for r in roles]
        if mask != expected:
            bad("mask", "loss_mask must be 0 on user turns and 1 on assistant turns")
    tokens, target = meta.get("token_count"), meta.get("target_tokens")
    if isinstance(tokens, int) and isinstance(target, int) and tokens > target:
        bad("budget", f"token_count {tokens} exceeds target {target}")
    kinds = meta.get("pair_kinds")
    counts = meta.get("qa_kind_counts")
    n_pairs = len(roles) // 2
    if kinds is not None:
        if len(kinds) != n_pairs:
            bad("kinds", f"{len(kinds)} pair kinds for {n_pairs} turn pairs")
        n_doc = sum(1 for k in kinds if k == "document")
        if counts is not None:
            if sum(counts.values()) != n_pairs - n_doc:
                bad("kinds", "qa_kind_counts does not sum to pairs minus document turns")
            tally: dict[str, int] = {}
            for k in kinds:
                if k != "document":
                    tally[k] = tally.get(k, 0) + 1
            if tally != {k: v for k, v in counts.items() if v}:
                bad("kinds", "qa_kind_counts disagrees with pair_kinds")
        if meta.get("include_summary") is False and n_doc:
            bad("summary", f"{n_doc} summary turns in a record built without summaries")
        items = meta.get("pair_items")
        if items is not None:
            seen: set[str] = set()
            for p, item in enumerate(items):
                if item and item in seen:
                    bad("duplicate", f"pair {p} repeats item {item!r}")
                    break
                seen.add(item)
        docs = meta.get("pair_docs")
        intro = meta.get("doc_intro")
        src = meta.get("source_doc_ids")
        if docs and intro is not None and src is not None and len(intro) == len(src):
            first_seen = dict(zip(src, intro))
            for p, d in enumerate(docs):
                start = first_seen.get(d, -1)
                if start < 0 or p < start:
                    bad("order", f"pair {p} references {d!r} before its document turn")
                    break
    return out


def validate(path: str | Path) -> list[Violation]:
    """Check every line of a dataset file; an empty list means valid."""
    out: list[Violation] = []
    with open(path, encoding=ENCODING) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                out.append(Violation(lineno, "parse", exc.msg))
                continue
            out.extend(check_record(obj, lineno))
    return out


@dataclass
class StatsReport:
    sample_count: int = 0
    token_min: int = 0
    token_median: float = 0.0
    token_max: int = 0
    token_deciles: list[float] = field(default_factory=list)
    qa_total: int = 0
    document_turns: int = 0
    qa_kind_counts: dict[str, int] = field(default_factory=dict)
    pool_shortfalls: int = 0
    truncated_samples: int = 0
    parse_failures: int = 0
    unparseable_lines: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def stats(path: str | Path) -> StatsReport:
    """Single-pass summary of a dataset file."""
    rep = StatsReport()
    tokens: list[int] = []
    with open(path, encoding=ENCODING) as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                rep.unparseable_lines += 1
                continue
            rep.sample_count += 1
            meta = obj.get("meta", {})
            kinds = meta.get("pair_kinds")
            if kinds is None:
                kinds = ["qa"] * (len(obj.get("conversations", [])) // 2)
            for k in kinds:
                if k == "document":
                    rep.document_turns += 1
                else:
                    rep.qa_total += 1
                    rep.qa_kind_counts[k] = rep.qa_kind_counts.get(k, 0) + 1
            if "token_count" in meta:
                tokens.append(meta["token_count"])
            rep.pool_shortfalls += len(meta.get("shortfalls", []))
            rep.truncated_samples += bool(meta.get("truncated"))
            rep.parse_failures += meta.get("parse_failures", 0)
    rep.qa_kind_counts = dict(sorted(rep.qa_kind_counts.items()))
    if tokens:
        rep.token_min, rep.token_max = min(tokens), max(tokens)
        rep.token_median = statistics.median(tokens)
        if len(tokens) >= 2:
            rep.token_deciles = statistics.quantiles(tokens, n=10, method="inclusive")
        else:
            rep.token_deciles = [float(tokens[0])] * 9
    return rep
