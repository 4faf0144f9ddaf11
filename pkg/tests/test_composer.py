from __future__ import annotations

import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from longctx_synth.composer import (
    DOCS_PER_TARGET,
    PRESETS,
    ComposePolicy,
    OverheadModel,
    TokenBudget,
    ablation_preset,
    compose,
    estimate_sample_tokens,
    expected_qa_pairs,
    parse_target,
    plan_documents,
    plan_samples,
)
from longctx_synth.corpus import RawDocument, TokenCounter
from longctx_synth.errors import EmptyPlan, PlanShortfall, UnknownPreset
from longctx_synth.question_bank import SUMMARY_REQUEST
from oracle import enumerate_pairs, kind_totals, turn_count
from synth import make_packet

BIG = TokenBudget(10**9)
COUNTER = TokenCounter()


def packets(k, **kw):
    return [make_packet(f"doc{i}", **kw) for i in range(k)]


def pair_ids(sample):
    return sample.pair_items


def totals(sample):
    c = Counter("pool" if k in ("diverse", "specific") else k for k in sample.pair_kinds)
    return dict(c)


def test_single_document_defaults():
    s = compose(packets(1), ComposePolicy(), BIG, random.Random(0))
    assert s.pair_kinds[0] == "document"
    assert totals(s) == {"document": 1, "hierarchical": 5, "pool": 5}
    assert s.turns[0].content.endswith("\n\n" + SUMMARY_REQUEST)
    assert s.turns[1].content == "summary of doc0"


def test_two_documents_forced_revisit():
    s = compose(packets(2), ComposePolicy(revisit_prob=1.0), BIG, random.Random(0))
    assert totals(s) == {"document": 2, "hierarchical": 5 + 5 + 3, "pool": 5 + 5 + 9}
    assert len(s.turns) == 68 == turn_count(2, 5, 5, 9, 3, 1)


@pytest.mark.parametrize("k", [1, 2, 3, 4, 6])
@pytest.mark.parametrize("p", [0, 1])
@pytest.mark.parametrize("counts", [(5, 5, 9, 3), (6, 6, 4, 4), (2, 7, 1, 5)])
def test_matches_enumerator(k, p, counts):
    n1h, n1d, n2, n3 = counts
    pol = ComposePolicy(n1_hier=n1h, n1_diverse=n1d, n2_cross_diverse=n2, n3_revisit_hier=n3, revisit_prob=p)
    pk = packets(k, n_hier=80, n_pool=120)
    s = compose(pk, pol, BIG, random.Random(k * 10 + p))
    events = enumerate_pairs(k, n1h, n1d, n2, n3, p)
    assert totals(s) == kind_totals(events)
    assert len(s.turns) == turn_count(k, n1h, n1d, n2, n3, p)
    # hierarchical items come out in exactly the enumerated queue order
    want = [f"doc{d}#h{pos}" for kind, d, pos in events if kind == "hierarchical"]
    got = [q for q, kind in zip(pair_ids(s), s.pair_kinds) if kind == "hierarchical"]
    assert got == want
    # event-by-event source documents for first-block pool draws
    for (kind, d, _), doc, skind in zip(events, s.pair_docs, s.pair_kinds):
        assert (kind == "pool") == (skind in ("diverse", "specific"))
        if isinstance(d, tuple):
            assert int(doc[3:]) < d[1]
        else:
            assert doc == f"doc{d}"
    assert not s.report.shortfalls and not s.report.truncated


def test_cross_document_draws_exclude_current():
    pk = packets(4)
    s = compose(pk, ComposePolicy(revisit_prob=0), BIG, random.Random(3))
    cross = [b for b in s.report.blocks if b.stage == "cross"]
    assert [b.doc_id for b in cross] == ["doc0", "doc0+doc1", "doc0+doc1+doc2"]
    pos = 0
    for b in s.report.blocks:
        docs = s.pair_docs[pos : pos + b.count]
        if b.stage == "cross":
            assert set(docs) <= set(b.doc_id.split("+"))
        pos += b.count


@given(
    k=st.integers(1, 5),
    n_hier=st.integers(0, 12),
    n_pool=st.integers(0, 25),
    p=st.floats(0, 1),
    target=st.integers(200, 60_000),
    seed=st.integers(0, 10**6),
    summary=st.booleans(),
    joint=st.booleans(),
    tail=st.booleans(),
    randomized=st.booleans(),
)
@settings(max_examples=200, deadline=None)
def test_sample_invariants(k, n_hier, n_pool, p, target, seed, summary, joint, tail, randomized):
    pol = ComposePolicy(revisit_prob=p, include_summary_turn=summary, revisit_joint=joint,
                        tail_specifics=tail, counts_mode="randomized" if randomized else "fixed")
    pk = packets(k, n_hier=n_hier, n_pool=n_pool)
    before = [p_.to_dict() for p_ in pk]
    s = compose(pk, pol, TokenBudget(target), random.Random(seed))
    assert [p_.to_dict() for p_ in pk] == before
    roles = [t.role for t in s.turns]
    assert roles == ["user", "assistant"] * (len(roles) // 2)
    assert all(t.loss_masked == (t.role == "user") for t in s.turns)
    assert s.token_count <= target
    assert s.token_count == sum(COUNTER.count(t.content) for t in s.turns)
    ids = [q for q, kind in zip(pair_ids(s), s.pair_kinds) if kind != "document"]
    assert len(ids) == len(set(ids))
    for p_idx, d in enumerate(s.pair_docs):
        j = s.source_doc_ids.index(d)
        assert 0 <= s.doc_intro[j] <= p_idx
    if not summary:
        assert "document" not in s.pair_kinds
    if s.report.truncated:
        assert s.token_count <= target


def test_budget_truncation_stops_before_overflow():
    pk = packets(3, doc_chars=4000)
    s = compose(pk, ComposePolicy(), TokenBudget(2500), random.Random(0))
    assert s.report.truncated
    assert s.token_count <= 2500
    assert len(s.turns) % 2 == 0


def test_shortfalls_recorded():
    pk = packets(2, n_hier=3, n_pool=4)
    s = compose(pk, ComposePolicy(revisit_prob=1.0), BIG, random.Random(0))
    kinds = {(sf.doc_id, sf.kind) for sf in s.report.shortfalls}
    assert ("doc0", "hierarchical") in kinds and ("doc0", "diverse") in kinds
    assert s.pair_kinds.count("hierarchical") == 6
    assert sum(k in ("diverse", "specific") for k in s.pair_kinds) == 8


def test_empty_plan():
    with pytest.raises(EmptyPlan):
        compose([], ComposePolicy(), BIG, random.Random(0))


def test_no_sum_prefixes_document_text():
    pk = packets(2)
    pol = ablation_preset("h-h-s-fixed-no-sum")
    s = compose(pk, pol, BIG, random.Random(0))
    assert "document" not in s.pair_kinds
    first_user = s.turns[0].content
    assert first_user.startswith(pk[0].document_text + "\n\n")
    assert s.doc_intro == [0, 6]
    assert s.turns[12].content.startswith(pk[1].document_text + "\n\n")


def test_no_sum_with_empty_blocks_carries_text_forward():
    pk = packets(2, n_hier=0, n_pool=0) + [make_packet("doc2", n_hier=10)]
    s = compose(pk, ComposePolicy(include_summary_turn=False), BIG, random.Random(0))
    first = s.turns[0].content
    for p_ in pk:
        assert p_.document_text in first
    assert s.doc_intro == [0, 0, 0]


def test_revisit_mean_small_run():
    pk = packets(4)
    pol = ComposePolicy()
    n = 2000
    mean = sum(compose(pk, pol, BIG, random.Random(s)).report.revisit_blocks for s in range(n)) / n
    assert abs(mean - 3.6) < 0.15


def test_revisit_joint_all_or_nothing():
    pk = packets(3)
    pol = ComposePolicy(revisit_joint=True, revisit_prob=0.5)
    seen = set()
    for seed in range(200):
        s = compose(pk, pol, BIG, random.Random(seed))
        # group revisit blocks under the cross block that precedes them
        groups: dict[str, list[str]] = {}
        current = None
        for b in s.report.blocks:
            if b.stage == "cross":
                current = b.doc_id
                groups[current] = []
            elif b.stage == "revisit":
                groups[current].append(b.doc_id)
        assert groups["doc0+doc1"] in ([], ["doc0", "doc1"])
        seen.add((len(groups["doc0"]), len(groups["doc0+doc1"])))
    assert seen == {(0, 0), (0, 2), (1, 0), (1, 2)}


def test_randomized_counts_in_range():
    pk = packets(3, n_hier=100, n_pool=200)
    pol = ablation_preset("hs-hs-hs-randomized")
    sizes = Counter()
    for seed in range(300):
        s = compose(pk, pol, BIG, random.Random(seed))
        for b in s.report.blocks:
            if b.stage != "document":
                assert 2 <= b.count <= 10
                sizes[b.count] += 1
    assert set(sizes) == set(range(2, 11))


def test_tail_drains_half_full_pools_specifics_first():
    pk = packets(1, n_pool=20, specific_every=4)
    s = compose(pk, ComposePolicy(tail_specifics=True), BIG, random.Random(0))
    tail = [b for b in s.report.blocks if b.stage == "tail"]
    assert tail and tail[0].count == 6
    tail_kinds = s.pair_kinds[-6:]
    n_spec = tail_kinds.count("specific")
    assert tail_kinds[:n_spec] == ["specific"] * n_spec
    pool_pairs = sum(k in ("diverse", "specific") for k in s.pair_kinds)
    assert pool_pairs == 11 and (20 - pool_pairs) * 2 < 20


def test_presets():
    main = ablation_preset("main")
    assert (main.n1_hier, main.n1_diverse, main.n2_cross_diverse, main.n3_revisit_hier, main.revisit_prob) == (5, 5, 9, 3, 0.6)
    hhs = ablation_preset("h-h-s-fixed")
    assert hhs.first_block_kinds == {"hierarchical"} and hhs.second_block_kinds == {"hierarchical"}
    assert hhs.revisit_kinds == {"diverse"} and hhs.include_summary_turn
    assert (hhs.n1_hier, hhs.n2_cross_diverse) == (6, 4)
    nosum = ablation_preset("h-h-s-fixed-no-sum")
    assert not nosum.include_summary_turn and nosum.revisit_kinds == hhs.revisit_kinds
    assert ablation_preset("h-h-randomized").revisit_kinds == frozenset()
    assert ablation_preset("h-h-h-randomized").counts_mode == "randomized"
    assert len(PRESETS) == 8
    with pytest.raises(UnknownPreset, match="h-h-s-fixed"):
        ablation_preset("s-s-s")


def test_h_h_s_fixed_blocks():
    s = compose(packets(2), ablation_preset("h-h-s-fixed"), BIG, random.Random(0))
    blocks = [(b.stage, b.kind, b.count) for b in s.report.blocks if b.stage != "document"]
    assert blocks == [("first", "hierarchical", 6), ("first", "hierarchical", 6), ("cross", "diverse", 4)]


def test_policy_validation():
    with pytest.raises(ValueError):
        ComposePolicy(n1_hier=-1)
    with pytest.raises(ValueError):
        ComposePolicy(revisit_prob=1.2)
    with pytest.raises(ValueError):
        ComposePolicy(first_block_kinds=frozenset({"multi-hop"}))
    with pytest.raises(ValueError):
        TokenBudget(100, min_fill_fraction=0)


def test_parse_target():
    assert parse_target("180k") == 180_000
    assert parse_target("1M") == 1_000_000
    assert parse_target("12345") == 12345
    assert DOCS_PER_TARGET == {180_000: 2, 350_000: 4, 650_000: 8, 1_000_000: 12}


# -- planning ------------------------------------------------------------------


def docs_of(n, tokens):
    return [RawDocument(f"d{i}", "x" * (tokens * 4), "") for i in range(n)]


def test_plan_docs_hint():
    assert len(plan_documents(docs_of(10, 100), TokenBudget(180_000), COUNTER, docs_hint=4)) == 4


def test_plan_80k_docs_at_180k():
    chosen = plan_documents(docs_of(6, 80_000), TokenBudget(180_000), COUNTER, rng=random.Random(0))
    assert len(chosen) == 2
    est = estimate_sample_tokens([80_000, 80_000], ComposePolicy(), COUNTER)
    # oracle: 160K of text plus expected QA turns and two summary turns
    qa = 2 * 10 + 9 + 0.6 * 3
    assert est == round(160_000 + qa * 192 + 2 * (400 + COUNTER.count(SUMMARY_REQUEST)))
    assert 0.9 * 180_000 <= est <= 180_000


def test_plan_empty_corpus():
    with pytest.raises(PlanShortfall):
        plan_documents([], TokenBudget(180_000), COUNTER)


def test_plan_hint_exceeds_corpus():
    with pytest.raises(PlanShortfall):
        plan_documents(docs_of(5, 100), TokenBudget(180_000), COUNTER, docs_hint=12)


def test_plan_skips_oversize_documents():
    docs = docs_of(1, 200_000) + [RawDocument(f"s{i}", "x" * 320_000, "") for i in range(3)]
    chosen = plan_documents(docs, TokenBudget(180_000), COUNTER)
    assert [d.id for d in chosen] == ["s0", "s1"]


def test_plan_samples_partitions_corpus():
    plans, shortfall = plan_samples(docs_of(6, 50), TokenBudget(180_000), COUNTER, docs_hint=2, rng=random.Random(1))
    assert len(plans) == 3 and shortfall is None
    ids = [d.id for p in plans for d in p]
    assert sorted(ids) == sorted(f"d{i}" for i in range(6))
    plans, shortfall = plan_samples(docs_of(7, 50), TokenBudget(180_000), COUNTER, docs_hint=2)
    assert len(plans) == 3 and isinstance(shortfall, PlanShortfall)


def test_plan_samples_greedy_underfill_reported():
    plans, shortfall = plan_samples(docs_of(5, 80_000), TokenBudget(180_000), COUNTER)
    assert len(plans) == 2 and shortfall is not None and shortfall.n_docs == 1


def test_expected_pairs():
    assert expected_qa_pairs(4, ComposePolicy()) == pytest.approx(40 + 27 + 0.6 * 3 * 6)
    assert expected_qa_pairs(2, ablation_preset("h-h-s-fixed")) == 16
    assert expected_qa_pairs(0, ComposePolicy()) == 0
    assert estimate_sample_tokens([100], ComposePolicy(include_summary_turn=False), COUNTER,
                                  OverheadModel(qa_pair_tokens=10)) == 200
