"""Two-level document chunking: medium sections subdivided into small chunks."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterator

from .corpus import RawDocument, TokenCounter
from .errors import EmptyDocument, InsufficientChunks

BOUNDARIES = ("token-greedy", "paragraph-aligned")
# paragraph-aligned cuts may back off at most this fraction of the chunk
PARAGRAPH_BACKOFF = 0.10


@dataclass(frozen=True)
class ChunkPolicy:
    small_tokens: int = 4096
    medium_tokens: int = 12288
    boundary: str = "token-greedy"

    def __post_init__(self) -> None:
        if self.small_tokens <= 0 or self.medium_tokens <= 0:
            raise ValueError("chunk sizes must be positive")
        if self.medium_tokens < self.small_tokens:
            raise ValueError("medium_tokens must be >= small_tokens")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}")


@dataclass(frozen=True)
class SmallChunk:
    medium_index: int
    index: int
    start: int
    end: int
    token_count: int
    text: str

    @property
    def ref(self) -> tuple[int, int]:
        return (self.medium_index, self.index)


@dataclass(frozen=True)
class MediumChunk:
    index: int
    start: int
    end: int
    token_count: int
    text: str
    smalls: tuple[SmallChunk, ...]


@dataclass(frozen=True)
class ChunkTree:
    doc_id: str
    text: str
    mediums: tuple[MediumChunk, ...]

    @property
    def smalls(self) -> list[SmallChunk]:
        return [s for m in self.mediums for s in m.smalls]

    @property
    def n_smalls(self) -> int:
        return sum(len(m.smalls) for m in self.mediums)

    def small(self, medium_index: int, small_index: int) -> SmallChunk:
        return self.mediums[medium_index].smalls[small_index]


def _cut_points(text: str, budget: int, counter: TokenCounter, boundary: str) -> Iterator[int]:
    """Yield successive end offsets of greedy chunks covering ``text``."""
    pos = 0
    n = len(text)
    while pos < n:
        size = counter.fit_prefix(text[pos:], budget)
        if size == 0:
            # a single character over budget (external tokenizer quirk); keep moving
            size = 1
        end = pos + size
        if boundary == "paragraph-aligned" and end < n:
            window = max(1, int(size * PARAGRAPH_BACKOFF))
            brk = text.rfind("\n\n", end - window, end)
            if brk > pos:
                end = brk + 2
        yield end
        pos = end


def build_tree(doc: RawDocument, policy: ChunkPolicy, counter: TokenCounter) -> ChunkTree:
    """Split ``doc`` greedily into mediums, then each medium into smalls.

    Spans are character offsets into ``doc.text``; joining the small chunks in
    order reproduces the document exactly. Remainders stay as undersized final
    chunks.
    """
    text = doc.text
    if not text:
        raise EmptyDocument(f"document {doc.id!r} has no text")
    mediums = []
    start = 0
    for m_idx, end in enumerate(_cut_points(text, policy.medium_tokens, counter, policy.boundary)):
        m_text = text[start:end]
        smalls = []
        s_start = 0
        for s_idx, s_end in enumerate(
            _cut_points(m_text, policy.small_tokens, counter, policy.boundary)
        ):
            s_text = m_text[s_start:s_end]
            smalls.append(
                SmallChunk(
                    medium_index=m_idx,
                    index=s_idx,
                    start=start + s_start,
                    end=start + s_end,
                    token_count=counter.count(s_text),
                    text=s_text,
                )
            )
            s_start = s_end
        mediums.append(
            MediumChunk(
                index=m_idx,
                start=start,
                end=end,
                token_count=counter.count(m_text),
                text=m_text,
                smalls=tuple(smalls),
            )
        )
        start = end
    return ChunkTree(doc_id=doc.id, text=text, mediums=tuple(mediums))


def sample_chunks_for_multihop(tree: ChunkTree, k: int, rng: random.Random) -> list[SmallChunk]:
    """Draw ``k`` distinct small chunks uniformly, returned in document order."""
    if not 2 <= k <= 4:
        raise ValueError("multi-hop questions span 2 to 4 chunks")
    smalls = tree.smalls
    if len(smalls) < k:
        raise InsufficientChunks(f"need {k} small chunks, document has {len(smalls)}")
    picked = sorted(rng.sample(range(len(smalls)), k))
    return [smalls[i] for i in picked]
