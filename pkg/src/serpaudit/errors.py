"""Exception types shared across the toolkit."""


class AuditError(Exception):
    """Base class for all toolkit-specific failures."""


class ConfigurationError(AuditError):
    """Bad or missing configuration: unknown formats, absent config keys, etc."""


class DataError(AuditError):
    """Input data violates a contract (e.g. labeled entities without a group)."""


class DegenerateInputError(AuditError):
    """Statistical routine received input it cannot meaningfully process."""


class TransportError(AuditError):
    """A single search-engine request failed after any applicable retries."""


class RateLimitedError(TransportError):
    """The remote endpoint signalled throttling; eligible for backoff + retry."""


class FetchError(AuditError):
    """Every repetition of a query failed; no result set could be assembled."""


class StageError(AuditError):
    """A pipeline stage failed; carries the stage name for the run manifest."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class VerificationError(AuditError):
    """A report bundle failed content-hash verification."""
