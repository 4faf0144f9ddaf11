"""Command line entry point: ``longctx-synth {generate,plan,compose,validate,stats}``.

Every generation flag can also be given in a JSON config file (``--config``)
using the flag name with underscores; flags on the command line win.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from fractions import Fraction

from .backend import BackendConfig
from .chunk_tree import ChunkPolicy
from .composer import OverheadModel, TokenBudget, ablation_preset, parse_target
from .emitter import stats, validate
from .errors import BackendUnavailable, LongCtxError
from .hier_walk import WalkPolicy
from .pipeline import RunConfig, run_compose, run_generate, run_plan
from .summarizer import SummaryLimits

log = logging.getLogger("longctx_synth")


def _branch_probs(s: str) -> tuple[float, float, float]:
    parts = [float(Fraction(p)) for p in s.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated numbers")
    return tuple(parts)


def _docs_per_sample(s: str) -> int | str:
    return s if s in ("preset", "auto") else int(s)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    # every default is None so that config-file values are only overridden explicitly
    g = p.add_argument_group("corpus")
    g.add_argument("--config", help="JSON file with default values for any flag below")
    g.add_argument("--corpus")
    g.add_argument("--corpus-format", choices=["txt-dir", "jsonl"])
    g.add_argument("--tokenizer", help="approx, approx:<tokens-per-char> or cmd:<exe>")

    g = p.add_argument_group("chunking")
    g.add_argument("--small-tokens", type=int)
    g.add_argument("--medium-tokens", type=int)
    g.add_argument("--boundary", choices=["token-greedy", "paragraph-aligned"])

    g = p.add_argument_group("backend")
    g.add_argument("--endpoint")
    g.add_argument("--model")
    g.add_argument("--max-in-flight", type=int)
    g.add_argument("--retries", type=int)
    g.add_argument("--timeout", type=float)
    g.add_argument("--context-limit", type=int)
    g.add_argument("--mock", action="store_true", default=None, help="use the offline mock generator")
    g.add_argument("--mock-latency", type=float)
    g.add_argument("--temperature-qa", type=float)
    g.add_argument("--temperature-summary", type=float)
    g.add_argument("--qa-max-tokens", type=int)

    g = p.add_argument_group("summaries and questions")
    g.add_argument("--word-limit-small", type=int)
    g.add_argument("--word-limit-medium", type=int)
    g.add_argument("--word-limit-global", type=int)
    g.add_argument("--n-hier-questions", type=int)
    g.add_argument("--n-diverse-questions", type=int)
    g.add_argument("--specific-rate", type=float)
    g.add_argument("--multihop-rate", type=float)
    g.add_argument("--no-initial-summary", action="store_true", default=None)
    g.add_argument("--branch-probs", type=_branch_probs, help="a,b,c for deeper/next-small/next-medium")
    g.add_argument("--prompt-catalog")

    g = p.add_argument_group("composition")
    g.add_argument("--target-tokens", help="180k, 350k, 650k, 1m or an integer")
    g.add_argument("--min-fill", type=float)
    g.add_argument("--num-samples", type=int)
    g.add_argument("--docs-per-sample", type=_docs_per_sample, help="integer, 'preset' or 'auto'")
    g.add_argument("--preset", help="main or an ablation preset such as h-h-s-fixed")
    g.add_argument("--revisit-prob", type=float)
    g.add_argument("--n1", type=int, help="per-document hierarchical and diverse block size")
    g.add_argument("--n2", type=int, help="cross-document diverse block size")
    g.add_argument("--n3", type=int, help="revisit hierarchical block size")
    g.add_argument("--revisit-joint", action="store_true", default=None)
    g.add_argument("--tail-specifics", action="store_true", default=None)
    g.add_argument("--qa-pair-tokens", type=int, help="planning estimate per QA turn pair")

    g = p.add_argument_group("run")
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int)
    g.add_argument("--checkpoint-dir")
    g.add_argument("--out")


_RUN_KEYS = {
    "corpus", "corpus_format", "tokenizer", "small_tokens", "medium_tokens", "boundary",
    "endpoint", "model", "max_in_flight", "retries", "timeout", "context_limit", "mock",
    "mock_latency", "temperature_qa", "temperature_summary", "qa_max_tokens",
    "word_limit_small", "word_limit_medium", "word_limit_global", "n_hier_questions",
    "n_diverse_questions", "specific_rate", "multihop_rate", "no_initial_summary",
    "branch_probs", "prompt_catalog", "target_tokens", "min_fill", "num_samples",
    "docs_per_sample", "preset", "revisit_prob", "n1", "n2", "n3", "revisit_joint",
    "tail_specifics", "qa_pair_tokens", "seed", "workers", "checkpoint_dir", "out",
}


def config_from_values(values: dict) -> RunConfig:
    """Build a :class:`RunConfig` from flat flag-style keys."""
    unknown = set(values) - _RUN_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    v = {k: x for k, x in values.items() if x is not None}

    def pick(obj, **mapping):
        kw = {field: v[key] for field, key in mapping.items() if key in v}
        return replace(obj, **kw) if kw else obj

    chunk = pick(ChunkPolicy(), small_tokens="small_tokens", medium_tokens="medium_tokens",
                 boundary="boundary")
    backend = pick(BackendConfig(), endpoint_url="endpoint", model_name="model",
                   max_in_flight="max_in_flight", retries="retries", timeout="timeout",
                   context_limit_tokens="context_limit")
    limits = pick(SummaryLimits(), small="word_limit_small", medium="word_limit_medium",
                  global_="word_limit_global")
    walk = pick(WalkPolicy(), n_questions="n_hier_questions", multihop_rate="multihop_rate")
    if "branch_probs" in v:
        walk = replace(walk, branch_probs=tuple(v["branch_probs"]))
    if v.get("no_initial_summary"):
        walk = replace(walk, include_initial_summary=False)

    policy = ablation_preset(v.get("preset", "main"))
    overrides = {}
    if "n1" in v:
        overrides.update(n1_hier=v["n1"], n1_diverse=v["n1"])
    if "n2" in v:
        overrides["n2_cross_diverse"] = v["n2"]
    if "n3" in v:
        overrides["n3_revisit_hier"] = v["n3"]
    for key in ("revisit_prob", "revisit_joint", "tail_specifics"):
        if key in v:
            overrides[key] = v[key]
    if overrides:
        policy = replace(policy, **overrides)

    budget = TokenBudget(parse_target(v.get("target_tokens", "180k")), v.get("min_fill", 0.9))
    overhead = pick(OverheadModel(), qa_pair_tokens="qa_pair_tokens")
    plain = {
        k: v[k]
        for k in ("corpus", "corpus_format", "tokenizer", "temperature_qa", "temperature_summary",
                  "qa_max_tokens", "specific_rate", "prompt_catalog", "docs_per_sample",
                  "num_samples", "seed", "workers", "checkpoint_dir", "out", "mock", "mock_latency")
        if k in v
    }
    if "n_diverse_questions" in v:
        plain["n_diverse"] = v["n_diverse_questions"]
    return RunConfig(chunk=chunk, walk=walk, compose=policy, budget=budget, backend=backend,
                     limits=limits, overhead=overhead, **plain)


def _config(ns: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if ns.config:
        with open(ns.config, encoding="utf-8") as fh:
            values.update(json.load(fh))
    for k, x in vars(ns).items():
        if k in _RUN_KEYS and x is not None:
            values[k] = x
    return config_from_values(values)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="longctx-synth",
        description="Generate long-context instruction-tuning conversations from raw documents.",
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("generate", "build packets (resumable) and compose a dataset"),
        ("plan", "dry run: document plans and request estimates"),
        ("compose", "compose a dataset from existing packet checkpoints"),
    ):
        _add_run_flags(sub.add_parser(name, help=help_))
    v = sub.add_parser("validate", help="check a dataset file")
    v.add_argument("path")
    s = sub.add_parser("stats", help="summary statistics for a dataset file")
    s.add_argument("path")
    s.add_argument("--json", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if ns.command == "validate":
            violations = validate(ns.path)
            for v in violations:
                print(v)
            print(f"{len(violations)} violation(s)")
            return 1 if violations else 0
        if ns.command == "stats":
            rep = stats(ns.path)
            if ns.json:
                print(json.dumps(rep.to_dict(), indent=2))
            else:
                for k, x in rep.to_dict().items():
                    print(f"{k}: {x}")
            return 0
        cfg = _config(ns)
        if ns.command == "plan":
            print(json.dumps(run_plan(cfg), indent=2))
        elif ns.command == "generate":
            print(json.dumps(run_generate(cfg), indent=2))
        else:
            print(json.dumps(run_compose(cfg), indent=2))
        return 0
    except BackendUnavailable as exc:
        print(f"backend unavailable, stopping; rerun to resume from checkpoints: {exc}",
              file=sys.stderr)
        return 3
    except (LongCtxError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
