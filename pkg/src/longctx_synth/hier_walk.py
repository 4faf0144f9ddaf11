"""Explore/exploit walk over the chunk tree that orders a document's questions.

The walk opens on a random medium chunk, zooms into its first small chunk,
and from then on either stays on the current small chunk, steps to the next
small chunk, or jumps to the next medium chunk. Indices wrap to 0 at the end
of a level, so the number of questions is independent of document size.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, replace

from .backend import Backend
from .chunk_tree import ChunkTree, sample_chunks_for_multihop
from .errors import MalformedGeneration
from .question_bank import (
    SUMMARY_REQUEST,
    GenCounters,
    PromptCatalog,
    QAItem,
    gen_hierarchical,
    gen_multihop,
    load_catalog,
)
from .summarizer import SummarySet

log = logging.getLogger(__name__)

DEEPER, NEXT_SMALL, NEXT_MEDIUM = 0, 1, 2
BRANCHES = (DEEPER, NEXT_SMALL, NEXT_MEDIUM)


@dataclass(frozen=True)
class WalkPolicy:
    n_questions: int = 25
    branch_probs: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    multihop_rate: float = 0.0
    include_initial_summary: bool = True

    def __post_init__(self) -> None:
        if self.n_questions < 1:
            raise ValueError("n_questions must be positive")
        if len(self.branch_probs) != 3 or any(p < 0 for p in self.branch_probs):
            raise ValueError("branch_probs must be three non-negative numbers")
        if not math.isclose(sum(self.branch_probs), 1.0, abs_tol=1e-9):
            raise ValueError("branch_probs must sum to 1")
        if not 0.0 <= self.multihop_rate <= 1.0:
            raise ValueError("multihop_rate must lie in [0, 1]")


@dataclass(frozen=True)
class WalkState:
    current_medium: int | None = None
    current_small: int | None = None
    step: int = 0
    last_branch: int | None = None

    def __post_init__(self) -> None:
        if self.current_small is not None and self.current_medium is None:
            raise ValueError("a small chunk needs a current medium")


def select_context(
    tree: ChunkTree,
    state: WalkState,
    rng: random.Random,
    branch_probs: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3),
) -> tuple[tuple[int, int | None], WalkState]:
    """Pick the next context as ``(medium, small-or-None)`` and the successor state."""
    n_med = len(tree.mediums)
    m, s = state.current_medium, state.current_small
    if m is None:
        ref = (rng.randrange(n_med), None)
        branch = None
    elif s is None:
        ref = (m, 0)
        branch = None
    else:
        branch = rng.choices(BRANCHES, weights=branch_probs)[0]
        if branch == DEEPER:
            ref = (m, s)
        elif branch == NEXT_SMALL:
            ref = (m, (s + 1) % len(tree.mediums[m].smalls))
        else:
            ref = ((m + 1) % n_med, None)
    nxt = WalkState(ref[0], ref[1], state.step + 1, branch)
    return ref, nxt


def summary_item(doc_id: str, summaries: SummarySet) -> QAItem:
    return QAItem("summary", SUMMARY_REQUEST, summaries.global_summary, doc_id, (), "summary",
                  item_id=f"{doc_id}#summary")


def run_walk(
    tree: ChunkTree,
    summaries: SummarySet,
    policy: WalkPolicy,
    backend: Backend,
    rng: random.Random,
    *,
    catalog: PromptCatalog | None = None,
    counters: GenCounters | None = None,
    **ask_kw,
) -> list[QAItem]:
    """Generate the ordered question list for one document.

    Item 0 is the global-summary item when ``include_initial_summary`` is set.
    Each hierarchical question may be followed by a multi-hop question with
    probability ``multihop_rate``. A walk question whose generation stays
    malformed after its retry is dropped and counted.
    """
    catalog = catalog or load_catalog()
    counters = counters if counters is not None else GenCounters()
    if not summaries.aligned_with(tree):
        raise ValueError("summaries are not aligned with the chunk tree")
    items: list[QAItem] = []
    if policy.include_initial_summary:
        items.append(summary_item(tree.doc_id, summaries))
    state = WalkState()
    n_smalls = tree.n_smalls
    for i in range(policy.n_questions):
        (m, s), state = select_context(tree, state, rng, policy.branch_probs)
        try:
            if s is None:
                item = gen_hierarchical(
                    tree.mediums[m].text, summaries.per_medium[m], False, backend,
                    doc_id=tree.doc_id, source=(m, None), catalog=catalog,
                    counters=counters, **ask_kw,
                )
            else:
                # a repeat visit asks a differently styled question on the same chunk
                template = rng.choice(catalog.diverse) if state.last_branch == DEEPER else None
                item = gen_hierarchical(
                    tree.small(m, s).text, summaries.per_small[m][s], True, backend,
                    doc_id=tree.doc_id, source=(m, s), template=template, catalog=catalog,
                    counters=counters, **ask_kw,
                )
        except MalformedGeneration:
            counters.dropped += 1
            item = None
        if item is not None:
            items.append(replace(item, item_id=f"{tree.doc_id}#h{i}"))
        if policy.multihop_rate and rng.random() < policy.multihop_rate and n_smalls >= 2:
            k = rng.randint(2, min(4, n_smalls))
            chunks = sample_chunks_for_multihop(tree, k, rng)
            try:
                mh = gen_multihop(chunks, backend, doc_id=tree.doc_id, catalog=catalog,
                                  counters=counters, **ask_kw)
            except MalformedGeneration:
                counters.dropped += 1
                continue
            items.append(replace(mh, item_id=f"{tree.doc_id}#m{i}"))
    return items
