"""Prompt catalog and the QA generators built on it.

Four species of question come out of here: diverse (one of ten question
styles on a single chunk), specific-detail, multi-hop across 2-4 chunks, and
hierarchical questions produced during the chunk walk.
"""

from __future__ import annotations

import json
import logging
import random
import string
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Sequence

from .backend import DEFAULT_QA_TEMPERATURE, Backend, GenRequest, extract_qa
from .chunk_tree import ChunkTree, SmallChunk
from .errors import CatalogError, MalformedGeneration
from .rng import substream

log = logging.getLogger(__name__)

DIVERSE_CATEGORIES = (
    "temporal",
    "character",
    "complex-analysis",
    "thematic",
    "comparative",
    "cause-effect",
    "hypothetical",
    "interpretive",
    "detail",
    "perspective",
)
CATEGORIES = DIVERSE_CATEGORIES + ("specific-detail", "multi-hop", "general-hierarchical", "summary")
QA_KINDS = ("summary", "hierarchical", "diverse", "specific", "multi-hop")
SUMMARY_REQUEST = "Please give me a summary of the book"

_REQUIRED_SLOTS = {
    "summary": {"word_limit", "chunk"},
    "general-hierarchical": {"context", "summary"},
}


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    category: str
    body: str

    @property
    def slots(self) -> list[str]:
        out = []
        for m in string.Template.pattern.finditer(self.body):
            name = m.group("named") or m.group("braced")
            if name:
                out.append(name)
        return out

    def render(self, **values: object) -> str:
        return string.Template(self.body).substitute({k: str(v) for k, v in values.items()})


def _required_slots(t: PromptTemplate) -> set[str]:
    if t.category in _REQUIRED_SLOTS:
        return _REQUIRED_SLOTS[t.category]
    if t.category == "multi-hop":
        k = sum(1 for s in t.slots if s.startswith("selected_chunk_"))
        return {f"selected_chunk_{j}" for j in range(1, k + 1)}
    return {"context"}


@dataclass
class PromptCatalog:
    templates: list[PromptTemplate]
    by_id: dict[str, PromptTemplate] = field(init=False)

    def __post_init__(self) -> None:
        self.by_id = {}
        for t in self.templates:
            if t.id in self.by_id:
                raise CatalogError(f"duplicate template id {t.id!r}")
            if t.category not in CATEGORIES:
                raise CatalogError(f"{t.id}: unknown category {t.category!r}")
            slots = t.slots
            required = _required_slots(t)
            for s in required:
                if slots.count(s) != 1:
                    raise CatalogError(f"{t.id}: slot {s!r} must appear exactly once")
            extra = set(slots) - required
            if extra:
                raise CatalogError(f"{t.id}: unexpected slots {sorted(extra)}")
            self.by_id[t.id] = t
        self.diverse = [t for t in self.templates if t.category in DIVERSE_CATEGORIES]
        if not self.diverse:
            raise CatalogError("catalog has no diverse templates")
        for cat in ("summary", "specific-detail", "general-hierarchical"):
            if not any(t.category == cat for t in self.templates):
                raise CatalogError(f"catalog is missing a {cat!r} template")
        self._multihop = {}
        for t in self.templates:
            if t.category == "multi-hop":
                k = len(_required_slots(t))
                if not 2 <= k <= 4:
                    raise CatalogError(f"{t.id}: multi-hop templates take 2-4 chunks")
                self._multihop.setdefault(k, t)

    def first(self, category: str) -> PromptTemplate:
        return next(t for t in self.templates if t.category == category)

    @property
    def summary(self) -> PromptTemplate:
        return self.first("summary")

    @property
    def specific(self) -> PromptTemplate:
        return self.first("specific-detail")

    @property
    def general(self) -> PromptTemplate:
        return self.first("general-hierarchical")

    def multihop(self, k: int) -> PromptTemplate:
        try:
            return self._multihop[k]
        except KeyError:
            raise CatalogError(f"no multi-hop template for {k} chunks") from None


def load_catalog(path: str | Path | None = None) -> PromptCatalog:
    """Load a catalog from ``path`` or the bundled default."""
    if path is None:
        return _default_catalog()
    return _parse_catalog(Path(path).read_text(encoding="utf-8"))


@lru_cache(maxsize=1)
def _default_catalog() -> PromptCatalog:
    raw = resources.files("longctx_synth").joinpath("data/prompts.json").read_text(encoding="utf-8")
    return _parse_catalog(raw)


def _parse_catalog(raw: str) -> PromptCatalog:
    try:
        records = json.loads(raw)
        templates = [PromptTemplate(r["id"], r["category"], r["body"]) for r in records]
    except (ValueError, KeyError, TypeError) as exc:
        raise CatalogError(f"bad catalog file: {exc}") from exc
    return PromptCatalog(templates)


@dataclass(frozen=True)
class QAItem:
    kind: str
    question: str
    answer: str
    doc_id: str
    source_chunks: tuple[tuple[int, int | None], ...]
    template_id: str
    item_id: str = ""

    def __post_init__(self) -> None:
        if self.kind not in QA_KINDS:
            raise ValueError(f"unknown QA kind {self.kind!r}")
        if not self.question.strip() or not self.answer.strip():
            raise ValueError("question and answer must be non-empty")
        n = len(self.source_chunks)
        if self.kind == "summary" and n:
            raise ValueError("summary items carry no source chunks")
        if self.kind == "multi-hop" and not 2 <= n <= 4:
            raise ValueError("multi-hop items reference 2-4 chunks")
        if self.kind in ("diverse", "specific", "hierarchical") and n != 1:
            raise ValueError(f"{self.kind} items reference exactly one chunk")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "question": self.question,
            "answer": self.answer,
            "doc_id": self.doc_id,
            "source_chunks": [list(c) for c in self.source_chunks],
            "template_id": self.template_id,
            "item_id": self.item_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QAItem":
        return cls(
            kind=d["kind"],
            question=d["question"],
            answer=d["answer"],
            doc_id=d["doc_id"],
            source_chunks=tuple((c[0], c[1]) for c in d["source_chunks"]),
            template_id=d["template_id"],
            item_id=d.get("item_id", ""),
        )


@dataclass
class GenCounters:
    """Parse-failure bookkeeping for one document."""

    malformed: int = 0
    dropped: int = 0


def ask(
    backend: Backend,
    prompt: str,
    *,
    temperature: float = DEFAULT_QA_TEMPERATURE,
    max_output_tokens: int = 1024,
    retries: int = 1,
    counters: GenCounters | None = None,
):
    """Send a QA prompt and extract the pair, re-asking on malformed output."""
    req = GenRequest(prompt, max_output_tokens=max_output_tokens, temperature=temperature, tag="qa")
    for attempt in range(retries + 1):
        raw = backend.generate(req)
        try:
            return extract_qa(raw)
        except MalformedGeneration as exc:
            if counters is not None:
                counters.malformed += 1
            log.debug("malformed generation (attempt %d): %.80r", attempt + 1, exc.raw)
            if attempt == retries:
                raise


def gen_diverse(
    chunk: SmallChunk,
    rng: random.Random,
    backend: Backend,
    *,
    doc_id: str = "",
    catalog: PromptCatalog | None = None,
    **ask_kw,
) -> QAItem:
    catalog = catalog or load_catalog()
    template = rng.choice(catalog.diverse)
    qa = ask(backend, template.render(context=chunk.text), **ask_kw)
    return QAItem("diverse", qa.question, qa.answer, doc_id, (chunk.ref,), template.id)


def gen_specific(
    chunk: SmallChunk,
    backend: Backend,
    *,
    doc_id: str = "",
    catalog: PromptCatalog | None = None,
    **ask_kw,
) -> QAItem:
    template = (catalog or load_catalog()).specific
    qa = ask(backend, template.render(context=chunk.text), **ask_kw)
    return QAItem("specific", qa.question, qa.answer, doc_id, (chunk.ref,), template.id)


def gen_multihop(
    chunks: Sequence[SmallChunk],
    backend: Backend,
    *,
    doc_id: str = "",
    catalog: PromptCatalog | None = None,
    **ask_kw,
) -> QAItem:
    if not 2 <= len(chunks) <= 4:
        raise ValueError(f"multi-hop needs 2-4 chunks, got {len(chunks)}")
    ordered = sorted(chunks, key=lambda c: c.ref)
    template = (catalog or load_catalog()).multihop(len(ordered))
    slots = {f"selected_chunk_{j}": c.text for j, c in enumerate(ordered, start=1)}
    qa = ask(backend, template.render(**slots), **ask_kw)
    return QAItem(
        "multi-hop", qa.question, qa.answer, doc_id, tuple(c.ref for c in ordered), template.id
    )


def gen_hierarchical(
    context_text: str,
    summary_text: str,
    specific: bool,
    backend: Backend,
    *,
    doc_id: str = "",
    source: tuple[int, int | None] = (0, None),
    template: PromptTemplate | None = None,
    catalog: PromptCatalog | None = None,
    **ask_kw,
) -> QAItem:
    """One walk question: detail-style on a small chunk, or context+summary otherwise.

    ``template`` overrides the single-context template used when ``specific``
    is true (the walk uses it to vary repeated questions on the same chunk).
    """
    catalog = catalog or load_catalog()
    if specific:
        template = template or catalog.specific
        prompt = template.render(context=context_text)
    else:
        template = catalog.general
        prompt = template.render(context=context_text, summary=summary_text)
    qa = ask(backend, prompt, **ask_kw)
    return QAItem("hierarchical", qa.question, qa.answer, doc_id, (source,), template.id)


def build_diverse_pool(
    tree: ChunkTree,
    n: int,
    backend: Backend,
    *,
    seed: int,
    specific_rate: float = 1 / 11,
    catalog: PromptCatalog | None = None,
    counters: GenCounters | None = None,
    max_redraws: int = 2,
    **ask_kw,
) -> list[QAItem]:
    """Generate ``n`` single-chunk questions, each on a uniformly drawn small chunk.

    Each slot has its own RNG stream keyed on (seed, doc, slot), so the pool
    does not depend on call order. A slot that keeps producing malformed
    output is redrawn with a new template up to ``max_redraws`` times, then
    dropped.
    """
    catalog = catalog or load_catalog()
    counters = counters if counters is not None else GenCounters()
    smalls = tree.smalls
    pool = []
    for slot in range(n):
        rng = substream(seed, tree.doc_id, "diverse", slot)
        chunk = rng.choice(smalls)
        want_specific = rng.random() < specific_rate
        for draw in range(max_redraws + 1):
            try:
                if want_specific and draw == 0:
                    item = gen_specific(chunk, backend, doc_id=tree.doc_id, catalog=catalog,
                                        counters=counters, **ask_kw)
                else:
                    item = gen_diverse(chunk, rng, backend, doc_id=tree.doc_id, catalog=catalog,
                                       counters=counters, **ask_kw)
            except MalformedGeneration:
                continue
            pool.append(item)
            break
        else:
            counters.dropped += 1
    return pool
