from __future__ import annotations

import itertools
import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from longctx_synth.chunk_tree import ChunkPolicy, build_tree, sample_chunks_for_multihop
from longctx_synth.corpus import RawDocument, TokenCounter
from longctx_synth.errors import EmptyDocument, InsufficientChunks
from synth import text_of_tokens

COUNTER = TokenCounter()


def tree_of(n_tokens: int, policy: ChunkPolicy = ChunkPolicy(), seed: int = 0):
    doc = RawDocument("d", text_of_tokens(n_tokens, random.Random(seed)), "")
    return build_tree(doc, policy, COUNTER)


def test_exact_division():
    t = tree_of(24_576)
    assert [m.token_count for m in t.mediums] == [12288, 12288]
    assert [[s.token_count for s in m.smalls] for m in t.mediums] == [[4096] * 3] * 2


def test_greedy_remainder():
    t = tree_of(13_000)
    assert [m.token_count for m in t.mediums] == [12288, 712]
    assert [[s.token_count for s in m.smalls] for m in t.mediums] == [[4096] * 3, [712]]


def test_short_document_is_one_chunk():
    t = tree_of(10)
    assert len(t.mediums) == 1 and t.n_smalls == 1
    assert t.smalls[0].text == t.text


def test_empty_document_raises():
    with pytest.raises(EmptyDocument):
        build_tree(RawDocument("e", "", ""), ChunkPolicy(), COUNTER)


def test_policy_validation():
    with pytest.raises(ValueError):
        ChunkPolicy(small_tokens=100, medium_tokens=50)
    with pytest.raises(ValueError):
        ChunkPolicy(boundary="sentence")


def check_tree(tree, policy):
    assert "".join(s.text for s in tree.smalls) == tree.text
    assert [m.index for m in tree.mediums] == list(range(len(tree.mediums)))
    for m in tree.mediums:
        assert tree.text[m.start : m.end] == m.text
        assert m.token_count <= policy.medium_tokens
        assert [s.index for s in m.smalls] == list(range(len(m.smalls)))
        for s in m.smalls:
            assert s.medium_index == m.index
            assert m.start <= s.start < s.end <= m.end
            assert tree.text[s.start : s.end] == s.text
            assert s.token_count <= policy.small_tokens
        for s in m.smalls[:-1]:
            assert s.token_count >= policy.small_tokens / 2
    for m in tree.mediums[:-1]:
        assert m.token_count >= policy.medium_tokens / 2


@given(
    n_tokens=st.integers(1, 3000),
    small=st.integers(8, 200),
    ratio=st.integers(1, 5),
    boundary=st.sampled_from(["token-greedy", "paragraph-aligned"]),
    seed=st.integers(0, 10_000),
)
@settings(max_examples=150, deadline=None)
def test_tree_invariants(n_tokens, small, ratio, boundary, seed):
    policy = ChunkPolicy(small_tokens=small, medium_tokens=small * ratio, boundary=boundary)
    check_tree(tree_of(n_tokens, policy, seed), policy)


@given(st.text(min_size=1, max_size=2000), st.integers(3, 60))
@settings(max_examples=150, deadline=None)
def test_reconstruction_arbitrary_text(text, small):
    policy = ChunkPolicy(small_tokens=small, medium_tokens=small * 3, boundary="paragraph-aligned")
    tree = build_tree(RawDocument("d", text, ""), policy, COUNTER)
    assert "".join(s.text for s in tree.smalls) == text


def test_paragraph_aligned_cuts_on_blank_lines():
    policy = ChunkPolicy(small_tokens=400, medium_tokens=1200, boundary="paragraph-aligned")
    tree = tree_of(5000, policy)
    check_tree(tree, policy)
    for s in tree.smalls[:-1]:
        # each cut either lands right after a blank line or found none in the backoff window
        assert s.text.endswith("\n\n") or "\n\n" not in s.text[-int(len(s.text) * 0.1):]


def test_multihop_two_of_two():
    t = tree_of(8192)
    assert t.n_smalls == 2
    assert sample_chunks_for_multihop(t, 2, random.Random(3)) == t.smalls


def test_multihop_deterministic_and_ordered():
    t = tree_of(40_960)
    assert t.n_smalls == 10
    a = sample_chunks_for_multihop(t, 3, random.Random(11))
    b = sample_chunks_for_multihop(t, 3, random.Random(11))
    assert a == b
    assert [c.ref for c in a] == sorted({c.ref for c in a})


def test_multihop_errors():
    t = tree_of(4096)
    with pytest.raises(InsufficientChunks):
        sample_chunks_for_multihop(t, 2, random.Random(0))
    with pytest.raises(ValueError):
        sample_chunks_for_multihop(tree_of(40_960), 5, random.Random(0))


def test_multihop_pairs_uniform():
    t = tree_of(5 * 4096)
    assert t.n_smalls == 5
    rng = random.Random(2024)
    draws = 10_000
    freq = Counter(tuple(c.ref for c in sample_chunks_for_multihop(t, 2, rng)) for _ in range(draws))
    pairs = list(itertools.combinations([s.ref for s in t.smalls], 2))
    assert set(freq) == set(pairs)
    for p in pairs:
        assert abs(freq[p] / draws - 1 / 10) <= 0.02
