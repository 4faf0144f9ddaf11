"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class LongCtxError(Exception):
    """Base class for all package errors."""


class IngestError(LongCtxError):
    pass


class RecordError(LongCtxError):
    """A single corpus record could not be turned into a document.

    Raised values are collected, not propagated: ingestion skips the record.
    """

    def __init__(self, source: str, reason: str):
        super().__init__(f"{source}: {reason}")
        self.source = source
        self.reason = reason


class EmptyDocument(LongCtxError):
    pass


class InsufficientChunks(LongCtxError):
    pass


class PromptTooLong(LongCtxError):
    def __init__(self, prompt_tokens: int, max_output_tokens: int, limit: int):
        super().__init__(
            f"prompt of {prompt_tokens} tokens + {max_output_tokens} output tokens "
            f"exceeds context limit {limit}"
        )
        self.prompt_tokens = prompt_tokens
        self.max_output_tokens = max_output_tokens
        self.limit = limit


class BackendUnavailable(LongCtxError):
    pass


class MalformedGeneration(LongCtxError):
    def __init__(self, raw: str, reason: str = "no question/answer could be extracted"):
        super().__init__(reason)
        self.raw = raw


class CatalogError(LongCtxError):
    pass


class EmptyPlan(LongCtxError):
    pass


class PlanShortfall(LongCtxError):
    def __init__(self, achieved_tokens: int, target_tokens: int, n_docs: int, reason: str = ""):
        msg = f"planned {n_docs} documents totalling ~{achieved_tokens} of {target_tokens} tokens"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)
        self.achieved_tokens = achieved_tokens
        self.target_tokens = target_tokens
        self.n_docs = n_docs


class UnknownPreset(LongCtxError, ValueError):
    pass
