"""Synthetic long-context instruction data from raw documents.

Documents are split into medium and small chunks, summarized bottom-up by a
short-context model, questioned through a hierarchical walk and a pool of
diverse prompts, and finally several documents are interleaved into one long
conversation packed to a token budget.
"""

from .backend import BackendConfig, GenRequest, HttpBackend, InFlightGate, MockBackend, extract_qa
from .chunk_tree import ChunkPolicy, ChunkTree, build_tree, sample_chunks_for_multihop
from .composer import (
    ComposePolicy,
    DocumentPacket,
    TokenBudget,
    TrainingSample,
    ablation_preset,
    compose,
    plan_documents,
)
from .corpus import RawDocument, TokenCounter, count_tokens, ingest
from .emitter import DatasetRecord, stats, validate, write_dataset
from .hier_walk import WalkPolicy, WalkState, run_walk, select_context
from .question_bank import QAItem, load_catalog
from .summarizer import SummarySet, summarize_chunk, summarize_hierarchical

__version__ = "0.1.0"

__all__ = [
    "BackendConfig",
    "ChunkPolicy",
    "ChunkTree",
    "ComposePolicy",
    "DatasetRecord",
    "DocumentPacket",
    "GenRequest",
    "HttpBackend",
    "InFlightGate",
    "MockBackend",
    "QAItem",
    "RawDocument",
    "SummarySet",
    "TokenBudget",
    "TokenCounter",
    "TrainingSample",
    "WalkPolicy",
    "WalkState",
    "ablation_preset",
    "build_tree",
    "compose",
    "count_tokens",
    "extract_qa",
    "ingest",
    "load_catalog",
    "plan_documents",
    "run_walk",
    "sample_chunks_for_multihop",
    "select_context",
    "stats",
    "summarize_chunk",
    "summarize_hierarchical",
    "validate",
    "write_dataset",
]
