"""Interleave several documents' QA packets into one long conversation.

For each document in order the sample gets: the document turn (document text
plus a summary request, answered by the global summary), a block of that
document's next hierarchical questions and a block of its diverse questions,
then cross-document diverse questions drawn from every earlier document's
unused pool, then for each earlier document an independent coin flip that
decides whether a few more of its hierarchical questions are revisited.
Turns are emitted until the next one would overflow the token budget.
"""

from __future__ import annotations

import random
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

from .corpus import RawDocument, TokenCounter
from .errors import EmptyPlan, PlanShortfall, UnknownPreset
from .question_bank import SUMMARY_REQUEST, QAItem

HIER = "hierarchical"
DIVERSE = "diverse"
BOTH = frozenset({HIER, DIVERSE})

TARGET_PRESETS = {"180k": 180_000, "350k": 350_000, "650k": 650_000, "1m": 1_000_000}
DOCS_PER_TARGET = {180_000: 2, 350_000: 4, 650_000: 8, 1_000_000: 12}


@dataclass
class DocumentPacket:
    doc_id: str
    document_text: str
    global_summary: str
    hier_queue: list[QAItem]
    diverse_pool: list[QAItem]
    parse_failures: int = 0
    artifacts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "document_text": self.document_text,
            "global_summary": self.global_summary,
            "hier_queue": [q.to_dict() for q in self.hier_queue],
            "diverse_pool": [q.to_dict() for q in self.diverse_pool],
            "parse_failures": self.parse_failures,
            "artifacts": self.artifacts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DocumentPacket":
        return cls(
            doc_id=d["doc_id"],
            document_text=d["document_text"],
            global_summary=d["global_summary"],
            hier_queue=[QAItem.from_dict(q) for q in d["hier_queue"]],
            diverse_pool=[QAItem.from_dict(q) for q in d["diverse_pool"]],
            parse_failures=d.get("parse_failures", 0),
            artifacts=d.get("artifacts", {}),
        )


@dataclass(frozen=True)
class ComposePolicy:
    name: str = "main"
    n1_hier: int = 5
    n1_diverse: int = 5
    n2_cross_diverse: int = 9
    n3_revisit_hier: int = 3
    revisit_prob: float = 0.6
    counts_mode: str = "fixed"
    count_range: tuple[int, int] = (2, 10)
    include_summary_turn: bool = True
    first_block_kinds: frozenset[str] = BOTH
    second_block_kinds: frozenset[str] = BOTH
    revisit_kinds: frozenset[str] = BOTH
    revisit_joint: bool = False
    tail_specifics: bool = False

    def __post_init__(self) -> None:
        counts = (self.n1_hier, self.n1_diverse, self.n2_cross_diverse, self.n3_revisit_hier)
        if min(counts) < 0:
            raise ValueError("counts must be non-negative")
        if not 0.0 <= self.revisit_prob <= 1.0:
            raise ValueError("revisit_prob must lie in [0, 1]")
        if self.counts_mode not in ("fixed", "randomized"):
            raise ValueError("counts_mode is 'fixed' or 'randomized'")
        lo, hi = self.count_range
        if not 0 <= lo <= hi:
            raise ValueError("count_range must satisfy 0 <= min <= max")
        for kinds in (self.first_block_kinds, self.second_block_kinds, self.revisit_kinds):
            if not set(kinds) <= BOTH:
                raise ValueError(f"block kinds must be a subset of {sorted(BOTH)}")

    def draw(self, n: int, rng: random.Random) -> int:
        if self.counts_mode == "randomized":
            return rng.randint(*self.count_range)
        return n

    def mean(self, n: int) -> float:
        if self.counts_mode == "randomized":
            return sum(self.count_range) / 2
        return n


@dataclass(frozen=True)
class TokenBudget:
    target_tokens: int
    min_fill_fraction: float = 0.9

    def __post_init__(self) -> None:
        if self.target_tokens <= 0:
            raise ValueError("target_tokens must be positive")
        if not 0 < self.min_fill_fraction <= 1:
            raise ValueError("min_fill_fraction must lie in (0, 1]")


def parse_target(value: str | int) -> int:
    if isinstance(value, int):
        return value
    key = value.strip().lower()
    if key in TARGET_PRESETS:
        return TARGET_PRESETS[key]
    return int(key.replace("_", ""))


def _preset(name: str, kinds: tuple[str, str, str], randomized: bool, summary: bool = True) -> ComposePolicy:
    codes = {"h": frozenset({HIER}), "s": frozenset({DIVERSE}), "hs": BOTH, "": frozenset()}
    first, second, follow = (codes[k] for k in kinds)
    return ComposePolicy(
        name=name,
        n1_hier=6,
        n1_diverse=6,
        n2_cross_diverse=4,
        n3_revisit_hier=4,
        revisit_prob=1.0,
        counts_mode="randomized" if randomized else "fixed",
        include_summary_turn=summary,
        first_block_kinds=first,
        second_block_kinds=second,
        revisit_kinds=follow,
    )


PRESETS: dict[str, ComposePolicy] = {
    "main": ComposePolicy(),
    "hs-hs-hs-fixed": _preset("hs-hs-hs-fixed", ("hs", "hs", "hs"), False),
    "hs-hs-hs-randomized": _preset("hs-hs-hs-randomized", ("hs", "hs", "hs"), True),
    "h-h-s-fixed": _preset("h-h-s-fixed", ("h", "h", "s"), False),
    "h-h-s-randomized": _preset("h-h-s-randomized", ("h", "h", "s"), True),
    "h-h-s-fixed-no-sum": _preset("h-h-s-fixed-no-sum", ("h", "h", "s"), False, summary=False),
    "h-h-randomized": _preset("h-h-randomized", ("h", "h", ""), True),
    "h-h-h-randomized": _preset("h-h-h-randomized", ("h", "h", "h"), True),
}


def ablation_preset(name: str) -> ComposePolicy:
    try:
        return PRESETS[name]
    except KeyError:
        raise UnknownPreset(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}") from None


@dataclass(frozen=True)
class Turn:
    role: str
    content: str
    loss_masked: bool


@dataclass(frozen=True)
class Shortfall:
    doc_id: str
    kind: str
    requested: int
    emitted: int


@dataclass(frozen=True)
class Block:
    stage: str  # document, first, cross, revisit, tail
    doc_id: str
    kind: str
    count: int


@dataclass
class ComposeReport:
    shortfalls: list[Shortfall] = field(default_factory=list)
    blocks: list[Block] = field(default_factory=list)
    truncated: bool = False
    revisit_blocks: int = 0

    def to_dict(self) -> dict:
        return {
            "shortfalls": [asdict(s) for s in self.shortfalls],
            "blocks": [asdict(b) for b in self.blocks],
            "truncated": self.truncated,
            "revisit_blocks": self.revisit_blocks,
        }


@dataclass
class TrainingSample:
    turns: list[Turn]
    token_count: int
    source_doc_ids: list[str]
    pair_kinds: list[str]
    pair_docs: list[str]
    pair_items: list[str]
    doc_intro: list[int]
    target_tokens: int
    policy_name: str
    include_summary: bool
    report: ComposeReport
    parse_failures: int = 0

    @property
    def qa_kind_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for k in self.pair_kinds:
            if k != "document":
                counts[k] = counts.get(k, 0) + 1
        return counts


class _BudgetExhausted(Exception):
    pass


class _Builder:
    def __init__(self, target: int, counter: TokenCounter):
        self.target = target
        self.counter = counter
        self.turns: list[Turn] = []
        self.kinds: list[str] = []
        self.docs: list[str] = []
        self.items: list[str] = []
        self.tokens = 0
        self.prefix: str | None = None

    def pair(self, user: str, assistant: str, kind: str, doc_id: str, item_id: str) -> int:
        if self.prefix is not None:
            user = f"{self.prefix}\n\n{user}"
        cost = self.counter.count(user) + self.counter.count(assistant)
        if self.tokens + cost > self.target:
            raise _BudgetExhausted
        self.prefix = None
        self.turns.append(Turn("user", user, True))
        self.turns.append(Turn("assistant", assistant, False))
        self.kinds.append(kind)
        self.docs.append(doc_id)
        self.items.append(item_id)
        self.tokens += cost
        return len(self.kinds) - 1

    def qa(self, item: QAItem) -> int:
        return self.pair(item.question, item.answer, item.kind, item.doc_id, item.item_id)


def compose(
    packets: Sequence[DocumentPacket],
    policy: ComposePolicy,
    budget: TokenBudget,
    rng: random.Random,
    counter: TokenCounter | None = None,
) -> TrainingSample:
    """Build one training conversation from ``packets`` in the given order.

    Packets are not mutated; consumption is tracked on per-call copies so a
    question is never emitted twice within a sample. Pool exhaustion is
    recorded as shortfalls in the report, never raised.
    """
    if not packets:
        raise EmptyPlan("compose needs at least one document packet")
    counter = counter or TokenCounter()
    b = _Builder(budget.target_tokens, counter)
    report = ComposeReport()
    hier = [list(p.hier_queue) for p in packets]
    hier_pos = [0] * len(packets)
    pools = [list(p.diverse_pool) for p in packets]
    used = [[False] * len(p) for p in pools]
    doc_intro: list[int] = []
    pending_intro: list[int] = []

    def emit_item(item: QAItem) -> None:
        idx = b.qa(item)
        for j in pending_intro:
            doc_intro[j] = idx
        pending_intro.clear()

    def take_hier(j: int, n: int, stage: str) -> None:
        avail = len(hier[j]) - hier_pos[j]
        k = min(n, avail)
        if k < n:
            report.shortfalls.append(Shortfall(packets[j].doc_id, HIER, n, k))
        emitted = 0
        try:
            for _ in range(k):
                emit_item(hier[j][hier_pos[j]])
                hier_pos[j] += 1
                emitted += 1
        finally:
            if emitted:
                report.blocks.append(Block(stage, packets[j].doc_id, HIER, emitted))

    def take_diverse(sources: list[int], n: int, stage: str, label: str) -> None:
        candidates = [(j, x) for j in sources for x in range(len(pools[j])) if not used[j][x]]
        k = min(n, len(candidates))
        if k < n:
            report.shortfalls.append(Shortfall(label, DIVERSE, n, k))
        emitted = 0
        try:
            for j, x in rng.sample(candidates, k):
                emit_item(pools[j][x])
                used[j][x] = True
                emitted += 1
        finally:
            if emitted:
                report.blocks.append(Block(stage, label, DIVERSE, emitted))

    try:
        for i, pkt in enumerate(packets):
            doc_intro.append(-1)
            if policy.include_summary_turn:
                doc_intro[i] = b.pair(
                    f"{pkt.document_text}\n\n{SUMMARY_REQUEST}", pkt.global_summary, "document",
                    pkt.doc_id, f"{pkt.doc_id}#summary",
                )
                report.blocks.append(Block("document", pkt.doc_id, "document", 1))
            else:
                b.prefix = pkt.document_text if b.prefix is None else f"{b.prefix}\n\n{pkt.document_text}"
                pending_intro.append(i)
            kinds = policy.first_block_kinds if i == 0 else policy.second_block_kinds
            if HIER in kinds:
                take_hier(i, policy.draw(policy.n1_hier, rng), "first")
            if DIVERSE in kinds:
                take_diverse([i], policy.draw(policy.n1_diverse, rng), "first", pkt.doc_id)
            if i == 0:
                continue
            if DIVERSE in policy.revisit_kinds:
                label = "+".join(p.doc_id for p in packets[:i])
                take_diverse(list(range(i)), policy.draw(policy.n2_cross_diverse, rng), "cross", label)
            if HIER in policy.revisit_kinds:
                joint = rng.random() < policy.revisit_prob if policy.revisit_joint else None
                for j in range(i):
                    hit = joint if joint is not None else rng.random() < policy.revisit_prob
                    if hit:
                        report.revisit_blocks += 1
                        take_hier(j, policy.draw(policy.n3_revisit_hier, rng), "revisit")
        if policy.tail_specifics:
            _tail(packets, pools, used, emit_item, report, rng)
    except _BudgetExhausted:
        report.truncated = True

    return TrainingSample(
        turns=b.turns,
        token_count=b.tokens,
        source_doc_ids=[p.doc_id for p in packets],
        pair_kinds=b.kinds,
        pair_docs=b.docs,
        pair_items=b.items,
        doc_intro=doc_intro,
        target_tokens=budget.target_tokens,
        policy_name=policy.name,
        include_summary=policy.include_summary_turn,
        report=report,
        parse_failures=sum(p.parse_failures for p in packets),
    )


def _tail(packets, pools, used, emit_item, report, rng) -> None:
    """Drain pools that still hold at least half their questions, specifics first."""
    for j, pkt in enumerate(packets):
        size = len(pools[j])
        left = [x for x in range(size) if not used[j][x]]
        if not size or len(left) * 2 < size:
            continue
        rng.shuffle(left)
        left.sort(key=lambda x: pools[j][x].kind != "specific")
        emitted = 0
        try:
            for x in left:
                if (size - sum(used[j])) * 2 < size:
                    break
                emit_item(pools[j][x])
                used[j][x] = True
                emitted += 1
        finally:
            if emitted:
                report.blocks.append(Block("tail", pkt.doc_id, DIVERSE, emitted))


# -- planning -----------------------------------------------------------------


@dataclass(frozen=True)
class OverheadModel:
    """Token cost assumed per generated turn pair when planning a sample."""

    qa_pair_tokens: int = 192
    summary_tokens: int = 400


def expected_qa_pairs(k: int, policy: ComposePolicy) -> float:
    """Expected QA turn pairs (excluding document turns) for ``k`` documents."""
    if k <= 0:
        return 0.0
    total = 0.0
    for i in range(k):
        kinds = policy.first_block_kinds if i == 0 else policy.second_block_kinds
        total += policy.mean(policy.n1_hier) * (HIER in kinds)
        total += policy.mean(policy.n1_diverse) * (DIVERSE in kinds)
    if DIVERSE in policy.revisit_kinds:
        total += (k - 1) * policy.mean(policy.n2_cross_diverse)
    if HIER in policy.revisit_kinds:
        total += policy.revisit_prob * policy.mean(policy.n3_revisit_hier) * k * (k - 1) / 2
    return total


def estimate_sample_tokens(
    doc_tokens: Iterable[int],
    policy: ComposePolicy,
    counter: TokenCounter,
    overhead: OverheadModel = OverheadModel(),
) -> int:
    doc_tokens = list(doc_tokens)
    k = len(doc_tokens)
    est = sum(doc_tokens) + expected_qa_pairs(k, policy) * overhead.qa_pair_tokens
    if policy.include_summary_turn:
        est += k * (overhead.summary_tokens + counter.count(SUMMARY_REQUEST))
    return int(round(est))


def _take(
    remaining: list[RawDocument],
    sizes: dict[str, int],
    budget: TokenBudget,
    policy: ComposePolicy,
    counter: TokenCounter,
    docs_hint: int | None,
    overhead: OverheadModel,
) -> list[RawDocument]:
    target = budget.target_tokens
    if docs_hint is not None:
        if docs_hint < 1:
            raise ValueError("docs_hint must be positive")
        chosen = remaining[:docs_hint]
        if len(chosen) < docs_hint:
            est = estimate_sample_tokens([sizes[d.id] for d in chosen], policy, counter, overhead)
            raise PlanShortfall(est, target, len(chosen), f"needed {docs_hint} documents")
        del remaining[:docs_hint]
        return chosen
    floor = budget.min_fill_fraction * target
    chosen: list[RawDocument] = []
    est = 0
    idx = 0
    while idx < len(remaining):
        doc = remaining[idx]
        trial = estimate_sample_tokens([sizes[d.id] for d in chosen + [doc]], policy, counter, overhead)
        if trial <= target:
            chosen.append(remaining.pop(idx))
            est = trial
        elif chosen and est >= floor:
            break
        else:
            idx += 1
    if not chosen or est < floor:
        remaining[0:0] = chosen
        raise PlanShortfall(est, target, len(chosen), "corpus exhausted")
    return chosen


def plan_documents(
    docs: Iterable[RawDocument],
    budget: TokenBudget,
    counter: TokenCounter,
    *,
    policy: ComposePolicy = ComposePolicy(),
    docs_hint: int | None = None,
    rng: random.Random | None = None,
    overhead: OverheadModel = OverheadModel(),
) -> list[RawDocument]:
    """Choose the documents for one sample.

    With ``docs_hint`` the first that many documents (after the seeded
    shuffle) are taken. Otherwise documents are added while the estimated
    sample size (documents plus projected QA turns) stays within the target;
    a document that would overflow is skipped. Raises :class:`PlanShortfall`
    if the estimate never reaches ``min_fill_fraction`` of the target.
    """
    remaining = list(docs)
    if rng is not None:
        rng.shuffle(remaining)
    sizes = {d.id: counter.count(d.text) for d in remaining}
    return _take(remaining, sizes, budget, policy, counter, docs_hint, overhead)


def plan_samples(
    docs: Iterable[RawDocument],
    budget: TokenBudget,
    counter: TokenCounter,
    *,
    policy: ComposePolicy = ComposePolicy(),
    docs_hint: int | None = None,
    rng: random.Random | None = None,
    num_samples: int | None = None,
    overhead: OverheadModel = OverheadModel(),
) -> tuple[list[list[RawDocument]], PlanShortfall | None]:
    """Partition a shuffled corpus into disjoint per-sample document plans.

    Returns the plans and the shortfall that ended planning, if any.
    """
    remaining = list(docs)
    if rng is not None:
        rng.shuffle(remaining)
    sizes = {d.id: counter.count(d.text) for d in remaining}
    plans: list[list[RawDocument]] = []
    while num_samples is None or len(plans) < num_samples:
        if not remaining and plans:
            return plans, None
        try:
            plans.append(_take(remaining, sizes, budget, policy, counter, docs_hint, overhead))
        except PlanShortfall as exc:
            return plans, exc
    return plans, None


def with_overrides(policy: ComposePolicy, **kw) -> ComposePolicy:
    kw = {k: v for k, v in kw.items() if v is not None}
    return replace(policy, **kw) if kw else policy
