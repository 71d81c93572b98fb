"""Shared exception types.

Every domain error raised by this package derives from XicmError so the CLI
can map them to exit code 1 uniformly.
"""

from __future__ import annotations


class XicmError(Exception):
    """Base class for all domain errors."""

    code = "error"


class DatasetError(XicmError):
    """Schema or consistency violation in a stored dataset.

    Carries enough context (file, line, field) to point at the offending
    record.
    """

    code = "dataset"

    def __init__(self, message: str, *, file: str = "", line: int = 0, field: str = ""):
        self.file = file
        self.line = line
        self.field = field
        loc = []
        if file:
            loc.append(file)
        if line:
            loc.append(f"line {line}")
        if field:
            loc.append(f"field {field!r}")
        suffix = f" ({', '.join(loc)})" if loc else ""
        super().__init__(message + suffix)


class NoActionsFound(XicmError):
    """A model response contained no parsable action."""

    code = "no_actions_found"


class FeatureFileError(XicmError):
    """Malformed feature file; offset points at the failing byte."""

    code = "feature_file"

    def __init__(self, message: str, *, offset: int = -1):
        self.offset = offset
        if offset >= 0:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


class DimensionMismatch(XicmError):
    """Vectors of incompatible dimensionality were combined."""

    code = "dimension_mismatch"


class TrainingDiverged(XicmError):
    """Training loss became non-finite."""

    code = "training_diverged"

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss!r})")


class TrainingFailed(XicmError):
    """Training finished but did not beat the trivial baseline."""

    code = "training_failed"


class GatewayError(XicmError):
    """Base class for LLM gateway failures."""

    code = "gateway"


class AuthFailure(GatewayError):
    code = "auth_failure"


class GatewayTimeout(GatewayError):
    code = "timeout"


class ExhaustedRetries(GatewayError):
    code = "exhausted_retries"

    def __init__(self, message: str, *, last_status: int | None = None):
        self.last_status = last_status
        super().__init__(message)


class SimError(XicmError):
    """Toy-simulator misuse (unknown task, policy unavailable, ...)."""

    code = "sim"


class ConfigError(XicmError):
    """Bad configuration file or value."""

    code = "config"
