"""End-to-end orchestration: ingest, chunk, summarize, generate pools, compose, emit.

Per-document work is checkpointed as one JSON packet per document plus an
append-only ledger, so an interrupted run resumes where it stopped and
composition is always re-derived from complete packets.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .backend import (
    DEFAULT_QA_TEMPERATURE,
    DEFAULT_SUMMARY_TEMPERATURE,
    Backend,
    BackendConfig,
    HttpBackend,
    InFlightGate,
    MockBackend,
)
from .chunk_tree import ChunkPolicy, build_tree
from .composer import (
    DOCS_PER_TARGET,
    ComposePolicy,
    DocumentPacket,
    OverheadModel,
    TokenBudget,
    compose,
    estimate_sample_tokens,
    plan_samples,
)
from .corpus import RawDocument, TokenCounter, ingest
from .emitter import write_dataset
from .errors import PlanShortfall
from .hier_walk import WalkPolicy, run_walk
from .question_bank import GenCounters, PromptCatalog, build_diverse_pool, load_catalog
from .rng import substream
from .summarizer import SummaryLimits, summarize_hierarchical

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    corpus: str | None = None
    corpus_format: str = "txt-dir"
    tokenizer: str = "approx"
    chunk: ChunkPolicy = field(default_factory=ChunkPolicy)
    walk: WalkPolicy = field(default_factory=WalkPolicy)
    compose: ComposePolicy = field(default_factory=ComposePolicy)
    budget: TokenBudget = field(default_factory=lambda: TokenBudget(180_000))
    backend: BackendConfig = field(default_factory=BackendConfig)
    limits: SummaryLimits = field(default_factory=SummaryLimits)
    overhead: OverheadModel = field(default_factory=OverheadModel)
    n_diverse: int = 50
    specific_rate: float = 1 / 11
    temperature_qa: float = DEFAULT_QA_TEMPERATURE
    temperature_summary: float = DEFAULT_SUMMARY_TEMPERATURE
    qa_max_tokens: int = 1024
    prompt_catalog: str | None = None
    docs_per_sample: int | str | None = None
    num_samples: int | None = None
    seed: int = 0
    workers: int = 4
    checkpoint_dir: str | None = None
    out: str | None = None
    mock: bool = False
    mock_latency: float = 0.0

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.n_diverse < 0:
            raise ValueError("n_diverse must be >= 0")

    @property
    def counter(self) -> TokenCounter:
        return TokenCounter.from_spec(self.tokenizer)

    @property
    def docs_hint(self) -> int | None:
        if self.docs_per_sample in (None, "auto"):
            return None
        if self.docs_per_sample == "preset":
            try:
                return DOCS_PER_TARGET[self.budget.target_tokens]
            except KeyError:
                raise ValueError(
                    f"no document-count preset for target {self.budget.target_tokens}"
                ) from None
        return int(self.docs_per_sample)

    def packet_fingerprint(self) -> str:
        """Hash of every setting that changes packet contents."""
        keys = {
            "tokenizer": self.tokenizer,
            "chunk": asdict(self.chunk),
            "walk": asdict(self.walk),
            "limits": asdict(self.limits),
            "n_diverse": self.n_diverse,
            "specific_rate": self.specific_rate,
            "temperature_qa": self.temperature_qa,
            "temperature_summary": self.temperature_summary,
            "qa_max_tokens": self.qa_max_tokens,
            "prompt_catalog": self.prompt_catalog,
            "seed": self.seed,
            "model": self.backend.model_name if not self.mock else "mock",
        }
        blob = json.dumps(keys, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def make_backend(cfg: RunConfig, gate: InFlightGate | None = None) -> Backend:
    if cfg.mock:
        return MockBackend(seed=cfg.seed, config=cfg.backend, counter=cfg.counter,
                           gate=gate, latency=cfg.mock_latency)
    return HttpBackend(cfg.backend, counter=cfg.counter, gate=gate)


def build_packet(
    doc: RawDocument,
    cfg: RunConfig,
    backend: Backend,
    catalog: PromptCatalog | None = None,
) -> DocumentPacket:
    """Run every generation stage for one document."""
    catalog = catalog or load_catalog(cfg.prompt_catalog)
    counter = cfg.counter
    ask_kw = {"temperature": cfg.temperature_qa, "max_output_tokens": cfg.qa_max_tokens}
    tree = build_tree(doc, cfg.chunk, counter)
    summaries = summarize_hierarchical(
        tree, backend, limits=cfg.limits, catalog=catalog, temperature=cfg.temperature_summary
    )
    counters = GenCounters()
    walk = run_walk(tree, summaries, cfg.walk, backend, substream(cfg.seed, doc.id, "walk"),
                    catalog=catalog, counters=counters, **ask_kw)
    pool = build_diverse_pool(tree, cfg.n_diverse, backend, seed=cfg.seed,
                              specific_rate=cfg.specific_rate, catalog=catalog,
                              counters=counters, **ask_kw)
    pool = [replace(q, item_id=f"{doc.id}#d{k}") for k, q in enumerate(pool)]
    return DocumentPacket(
        doc_id=doc.id,
        document_text=doc.text,
        global_summary=summaries.global_summary,
        hier_queue=[q for q in walk if q.kind != "summary"],
        diverse_pool=pool,
        parse_failures=counters.malformed,
        artifacts={
            "summaries": summaries.to_dict(),
            "chunks": [[m.start, m.end, [[s.start, s.end] for s in m.smalls]] for m in tree.mediums],
            "dropped_slots": counters.dropped,
        },
    )


class CheckpointStore:
    """Per-document packet files plus an append-only ledger of completed ids."""

    def __init__(self, root: str | Path, fingerprint: str | None = None):
        self.root = Path(root)
        self.packets = self.root / "packets"
        self.ledger = self.root / "ledger.jsonl"
        self.packets.mkdir(parents=True, exist_ok=True)
        if fingerprint is not None:
            self._check_fingerprint(fingerprint)

    def _check_fingerprint(self, fingerprint: str) -> None:
        f = self.root / "fingerprint"
        if f.exists():
            old = f.read_text().strip()
            if old != fingerprint:
                raise ValueError(
                    f"checkpoint dir {self.root} was produced with different generation "
                    "settings; use a fresh --checkpoint-dir"
                )
        else:
            f.write_text(fingerprint + "\n")

    def path_for(self, doc_id: str) -> Path:
        slug = re.sub(r"[^A-Za-z0-9._-]+", "_", doc_id)[:60]
        digest = hashlib.sha256(doc_id.encode("utf-8")).hexdigest()[:12]
        return self.packets / f"{slug}-{digest}.json"

    def done(self) -> list[str]:
        if not self.ledger.exists():
            return []
        ids = []
        with self.ledger.open(encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    doc_id = json.loads(line)["doc_id"]
                    if self.path_for(doc_id).exists() and doc_id not in ids:
                        ids.append(doc_id)
        return ids

    def save(self, packet: DocumentPacket) -> None:
        path = self.path_for(packet.doc_id)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(packet.to_dict(), ensure_ascii=False), encoding="utf-8")
        os.replace(tmp, path)
        with self.ledger.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps({"doc_id": packet.doc_id, "file": path.name}) + "\n")

    def load(self, doc_id: str) -> DocumentPacket:
        return DocumentPacket.from_dict(json.loads(self.path_for(doc_id).read_text(encoding="utf-8")))

    def save_plan(self, plans: list[list[str]]) -> None:
        (self.root / "plan.json").write_text(json.dumps(plans) + "\n", encoding="utf-8")

    def load_plan(self) -> list[list[str]] | None:
        p = self.root / "plan.json"
        return json.loads(p.read_text(encoding="utf-8")) if p.exists() else None


def _checkpoint_dir(cfg: RunConfig) -> Path:
    if cfg.checkpoint_dir:
        return Path(cfg.checkpoint_dir)
    if not cfg.out:
        raise ValueError("need --out or --checkpoint-dir")
    out = Path(cfg.out)
    return out.with_name(out.stem + "_ckpt")


def _plan(cfg: RunConfig, docs: list[RawDocument]) -> tuple[list[list[RawDocument]], PlanShortfall | None]:
    plans, shortfall = plan_samples(
        docs, cfg.budget, cfg.counter, policy=cfg.compose, docs_hint=cfg.docs_hint,
        rng=substream(cfg.seed, "plan"), num_samples=cfg.num_samples, overhead=cfg.overhead,
    )
    if not plans:
        raise shortfall or PlanShortfall(0, cfg.budget.target_tokens, 0, "empty corpus")
    return plans, shortfall


def _load_corpus(cfg: RunConfig) -> list[RawDocument]:
    if not cfg.corpus:
        raise ValueError("need --corpus")
    errors: list = []
    docs = list(ingest(cfg.corpus, cfg.corpus_format, errors=errors))
    for e in errors:
        log.warning("skipped record %s", e)
    return docs


def build_packets(
    docs: list[RawDocument],
    cfg: RunConfig,
    backend: Backend,
    store: CheckpointStore,
) -> dict[str, DocumentPacket]:
    """Build (or resume) packets for ``docs``; the calling thread is the only ledger writer."""
    done = set(store.done())
    todo = [d for d in docs if d.id not in done]
    catalog = load_catalog(cfg.prompt_catalog)
    if todo:
        log.info("building %d packets (%d already checkpointed)", len(todo), len(done))
    with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
        pending = {ex.submit(build_packet, d, cfg, backend, catalog) for d in todo}
        error: BaseException | None = None
        while pending:
            finished, pending = wait(pending, return_when=FIRST_EXCEPTION)
            for fut in finished:
                exc = fut.exception()
                if exc is None:
                    store.save(fut.result())
                elif error is None:
                    error = exc
            if error is not None:
                for fut in pending:
                    fut.cancel()
                # drain whatever was already running so its work is not lost
                for fut in wait(pending).done:
                    if not fut.cancelled() and fut.exception() is None:
                        store.save(fut.result())
                raise error
    return {d.id: store.load(d.id) for d in docs}


def run_generate(cfg: RunConfig, backend: Backend | None = None) -> dict:
    """Full run; returns the dataset manifest."""
    if not cfg.out:
        raise ValueError("need --out")
    docs = _load_corpus(cfg)
    plans, shortfall = _plan(cfg, docs)
    store = CheckpointStore(_checkpoint_dir(cfg), cfg.packet_fingerprint())
    store.save_plan([[d.id for d in plan] for plan in plans])
    needed = list({d.id: d for plan in plans for d in plan}.values())
    backend = backend or make_backend(cfg)
    packets = build_packets(needed, cfg, backend, store)
    return _compose_and_write(cfg, [[d.id for d in p] for p in plans], packets, shortfall)


def run_compose(cfg: RunConfig) -> dict:
    """Compose a dataset from existing packet checkpoints only."""
    if not cfg.out:
        raise ValueError("need --out")
    store = CheckpointStore(_checkpoint_dir(cfg))
    packets = {i: store.load(i) for i in store.done()}
    plan_ids = store.load_plan()
    shortfall = None
    if plan_ids is None or any(i not in packets for p in plan_ids for i in p):
        docs = [RawDocument(p.doc_id, p.document_text, "") for p in packets.values()]
        plans, shortfall = _plan(cfg, docs)
        plan_ids = [[d.id for d in p] for p in plans]
    return _compose_and_write(cfg, plan_ids, packets, shortfall)


def _compose_and_write(
    cfg: RunConfig,
    plan_ids: list[list[str]],
    packets: dict[str, DocumentPacket],
    shortfall: PlanShortfall | None,
) -> dict:
    counter = cfg.counter
    samples = (
        compose([packets[i] for i in ids], cfg.compose, cfg.budget,
                substream(cfg.seed, "sample", n), counter)
        for n, ids in enumerate(plan_ids)
    )
    extra = {
        "target_tokens": cfg.budget.target_tokens,
        "documents": sum(len(p) for p in plan_ids),
        "plan_shortfall": str(shortfall) if shortfall else None,
    }
    return write_dataset(samples, cfg.out, seed=cfg.seed, policy=cfg.compose.name, extra=extra)


def run_plan(cfg: RunConfig) -> dict:
    """Dry run: document plans with token and request estimates, no backend calls."""
    docs = _load_corpus(cfg)
    plans, shortfall = _plan(cfg, docs)
    counter = cfg.counter
    rows = []
    total_summary = total_qa = 0
    for n, plan in enumerate(plans):
        doc_rows = []
        for d in plan:
            req = estimate_requests(d, cfg)
            total_summary += req["summary_requests"]
            total_qa += req["qa_requests"]
            doc_rows.append({"doc_id": d.id, "tokens": counter.count(d.text), **req})
        est = estimate_sample_tokens([r["tokens"] for r in doc_rows], cfg.compose, counter, cfg.overhead)
        rows.append({"sample": n, "documents": doc_rows, "estimated_tokens": est})
    return {
        "target_tokens": cfg.budget.target_tokens,
        "samples": rows,
        "summary_requests": total_summary,
        "qa_requests": total_qa,
        "plan_shortfall": str(shortfall) if shortfall else None,
    }


def estimate_requests(doc: RawDocument, cfg: RunConfig) -> dict:
    tree = build_tree(doc, cfg.chunk, cfg.counter)
    n_med, n_small = len(tree.mediums), tree.n_smalls
    multihop = cfg.walk.n_questions * cfg.walk.multihop_rate if n_small >= 2 else 0
    return {
        "mediums": n_med,
        "smalls": n_small,
        "summary_requests": n_small + n_med + 1,
        "qa_requests": round(cfg.walk.n_questions + cfg.n_diverse + multihop),
    }
