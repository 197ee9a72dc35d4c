"""Exception types shared across the pipeline."""


class PrognoteError(Exception):
    """Base class for every error raised deliberately by this package."""


class ConfigError(PrognoteError):
    """A configuration value (or combination of values) is invalid."""


class InputError(PrognoteError):
    """Runtime input data violates a precondition (empty roster, bad ids, ...)."""


class ContractViolation(PrognoteError):
    """An internal call was made with arguments its contract forbids."""


class TrainingError(PrognoteError):
    """Training produced a non-finite value; carries the failing step index."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class CheckpointError(PrognoteError):
    """A checkpoint could not be read, or does not match the expected config."""


class MetricError(PrognoteError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""


class MissingArtifactError(PrognoteError):
    """A required input file does not exist; carries the absent path."""

    def __init__(self, path):
        super().__init__(f"missing input artifact: {path}")
        self.path = str(path)
