"""Exception types shared across the package."""


class AgilemError(Exception):
    """Base class for every error raised by this package."""


class FormatError(AgilemError):
    """A binary or JSONL artifact is malformed (bad magic, truncation, junk)."""


class ValidationError(AgilemError):
    """Inputs violate a documented precondition (shape, dtype, range, NaN)."""


class PhaseError(AgilemError):
    """An operation was attempted in a session phase that forbids it."""

    def __init__(self, message: str, phase: str = ""):
        super().__init__(message)
        self.phase = phase


class LedgerError(AgilemError):
    """A rating record is inconsistent with the ledger or the pending batch."""


class TrainingDivergedError(AgilemError):
    """A non-finite loss or parameter appeared during optimization."""

    def __init__(self, message: str, epoch: int, step: int):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class CorpusExhaustedError(AgilemError):
    """No unrated items remain to build the next batch from."""
