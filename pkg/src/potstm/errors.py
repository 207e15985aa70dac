"""Exception types shared across the transaction systems."""
from __future__ import annotations


class TxnAbort(Exception):
    """Internal control-flow signal: the current attempt must be discarded.

    Raised by reads that observe an inconsistent or too-new snapshot and by
    commit-time validation/locking failures.  The retry loop catches it; it
    never escapes a run.
    """

    def __init__(self, kind: str):
        super().__init__(kind)
        self.kind = kind


class ExplicitAbort(Exception):
    """Raised by transaction bodies that request an abort themselves.

    retry=True means "discard my effects and run me again"; retry=False means
    "discard my effects and move on" (the slot still commits, as a no-op).
    """

    def __init__(self, retry: bool):
        super().__init__("retry" if retry else "no-retry")
        self.retry = retry


class ContractViolation(RuntimeError):
    """A caller broke a protocol rule (e.g. unlocking a stripe it does not own)."""


class RunCancelled(RuntimeError):
    """Another worker failed; this worker should unwind quietly."""


class HangError(RuntimeError):
    """A run made no progress before its deadline.

    Carries a report naming the sequence slot everyone is stuck behind and,
    when known, the thread/label that was expected to fill it.
    """

    def __init__(self, message: str, report: dict | None = None):
        super().__init__(message)
        self.report = report or {}
