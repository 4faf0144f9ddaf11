from __future__ import annotations

import random
from concurrent.futures import ThreadPoolExecutor

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from longctx_synth.backend import MockBackend
from longctx_synth.chunk_tree import ChunkPolicy, build_tree
from longctx_synth.corpus import RawDocument, TokenCounter
from longctx_synth.errors import BackendUnavailable
from longctx_synth.summarizer import (
    SummaryLimits,
    SummarySet,
    summarize_chunk,
    summarize_hierarchical,
    truncate_words,
)
from synth import text_of_tokens

POLICY = ChunkPolicy(small_tokens=64, medium_tokens=192)


def tree_of(n_tokens, seed=0, policy=POLICY):
    doc = RawDocument("d", text_of_tokens(n_tokens, random.Random(seed)), "")
    return build_tree(doc, policy, TokenCounter())


def test_shape_two_by_three():
    tree = tree_of(384)
    assert [len(m.smalls) for m in tree.mediums] == [3, 3]
    s = summarize_hierarchical(tree, MockBackend())
    assert len(s.per_medium) == 2 and [len(x) for x in s.per_small] == [3, 3]
    assert s.global_summary and s.aligned_with(tree)


def test_single_chunk_document():
    tree = tree_of(10)
    be = MockBackend(record=True)
    s = summarize_hierarchical(tree, be)
    assert be.n_calls == 3
    assert s.per_small[0][0] in be.calls[1].prompt
    assert s.per_medium[0] in be.calls[2].prompt


@given(st.integers(1, 1500), st.integers(0, 50))
@settings(max_examples=40, deadline=None)
def test_call_count_and_alignment(n_tokens, seed):
    tree = tree_of(n_tokens, seed)
    be = MockBackend(record=True)
    s = summarize_hierarchical(tree, be)
    assert be.n_calls == tree.n_smalls + len(tree.mediums) + 1
    assert s.aligned_with(tree)
    for text, limit in [(s.global_summary, 300)] + [(m, 200) for m in s.per_medium]:
        assert len(text.split()) <= limit * 1.2


def test_bottom_up_dependency():
    tree = tree_of(900)
    be = MockBackend(record=True)
    s = summarize_hierarchical(tree, be)
    final = be.calls[-1].prompt
    for m in s.per_medium:
        assert m in final
    for m_idx, children in enumerate(s.per_small):
        medium_prompt = be.calls[tree.n_smalls + m_idx].prompt
        for child in children:
            assert child in medium_prompt
        assert tree.mediums[m_idx].text not in medium_prompt


def test_parallel_small_summaries_match_serial():
    tree = tree_of(1200)
    serial = summarize_hierarchical(tree, MockBackend())
    with ThreadPoolExecutor(8) as ex:
        parallel = summarize_hierarchical(tree, MockBackend(), executor=ex)
    assert serial == parallel


def test_overrun_truncated_at_sentence():
    out = summarize_chunk("some text", 50, MockBackend(overrun_words=200))
    assert len(out.split()) <= 60
    assert out.endswith(".")


def test_truncate_without_sentence_breaks():
    text = " ".join(["w"] * 100)
    assert len(truncate_words(text, 10).split()) == 12
    assert truncate_words("short one.", 10) == "short one."


def test_prompt_uses_word_limit():
    be = MockBackend(record=True)
    summarize_chunk("abc", 77, be)
    assert "no more than 77 words" in be.calls[0].prompt


def test_empty_text_rejected():
    with pytest.raises(ValueError):
        summarize_chunk("   ", 50, MockBackend())


def test_backend_failure_propagates():
    with pytest.raises(BackendUnavailable):
        summarize_hierarchical(tree_of(900), MockBackend(fail_after=3))


def test_deterministic_and_serializable():
    tree = tree_of(500)
    a = summarize_hierarchical(tree, MockBackend(seed=2), limits=SummaryLimits(40, 60, 80))
    b = summarize_hierarchical(tree, MockBackend(seed=2), limits=SummaryLimits(40, 60, 80))
    assert a == b
    assert SummarySet.from_dict(a.to_dict()) == a
