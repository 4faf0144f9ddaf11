"""Bottom-up summaries: small chunks, then mediums from their children, then global."""

from __future__ import annotations

import math
import re
from concurrent.futures import Executor
from dataclasses import dataclass

from .backend import DEFAULT_SUMMARY_TEMPERATURE, Backend, GenRequest
from .chunk_tree import ChunkTree
from .question_bank import PromptCatalog, load_catalog

# summaries may overrun their word limit by this factor before being cut
SOFT_CEILING = 1.2
_SENTENCE_END = re.compile(r"(?<=[.!?])[\"')\]]*\s+")


@dataclass(frozen=True)
class SummaryLimits:
    small: int = 150
    medium: int = 200
    global_: int = 300


@dataclass
class SummarySet:
    doc_id: str
    global_summary: str
    per_medium: list[str]
    per_small: list[list[str]]
    limits: SummaryLimits = SummaryLimits()

    def aligned_with(self, tree: ChunkTree) -> bool:
        return len(self.per_medium) == len(tree.mediums) and [
            len(s) for s in self.per_small
        ] == [len(m.smalls) for m in tree.mediums]

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "global": self.global_summary,
            "per_medium": self.per_medium,
            "per_small": self.per_small,
            "word_limits": [self.limits.small, self.limits.medium, self.limits.global_],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SummarySet":
        return cls(d["doc_id"], d["global"], d["per_medium"], d["per_small"],
                   SummaryLimits(*d["word_limits"]))


def truncate_words(text: str, word_limit: int) -> str:
    """Cut ``text`` to the soft ceiling, preferring to end on a sentence boundary."""
    ceiling = math.floor(word_limit * SOFT_CEILING)
    if len(text.split()) <= ceiling:
        return text
    kept: list[str] = []
    n = 0
    for sent in _SENTENCE_END.split(text.strip()):
        w = len(sent.split())
        if n + w > ceiling:
            break
        kept.append(sent)
        n += w
    if kept:
        return " ".join(kept)
    return " ".join(text.split()[:ceiling])


def summarize_chunk(
    text: str,
    word_limit: int,
    backend: Backend,
    *,
    catalog: PromptCatalog | None = None,
    temperature: float = DEFAULT_SUMMARY_TEMPERATURE,
) -> str:
    if not text.strip():
        raise ValueError("cannot summarize empty text")
    prompt = (catalog or load_catalog()).summary.render(word_limit=word_limit, chunk=text)
    # ~2 tokens per word leaves room for the soft ceiling
    req = GenRequest(prompt, max_output_tokens=2 * word_limit + 16,
                     temperature=temperature, tag="summary")
    return truncate_words(backend.generate(req).strip(), word_limit)


def summarize_hierarchical(
    tree: ChunkTree,
    backend: Backend,
    *,
    limits: SummaryLimits = SummaryLimits(),
    catalog: PromptCatalog | None = None,
    temperature: float = DEFAULT_SUMMARY_TEMPERATURE,
    executor: Executor | None = None,
) -> SummarySet:
    """Summarize every small chunk, each medium from its small summaries, then the whole.

    Makes exactly ``S + M + 1`` backend calls. Any backend error propagates and
    nothing partial is returned.
    """
    kw = dict(catalog=catalog, temperature=temperature)

    def small(text: str) -> str:
        return summarize_chunk(text, limits.small, backend, **kw)

    texts = [s.text for s in tree.smalls]
    flat = list(executor.map(small, texts)) if executor else [small(t) for t in texts]
    per_small, i = [], 0
    for m in tree.mediums:
        per_small.append(flat[i : i + len(m.smalls)])
        i += len(m.smalls)
    per_medium = [
        summarize_chunk("\n\n".join(children), limits.medium, backend, **kw)
        for children in per_small
    ]
    global_summary = summarize_chunk("\n\n".join(per_medium), limits.global_, backend, **kw)
    return SummarySet(tree.doc_id, global_summary, per_medium, per_small, limits)
