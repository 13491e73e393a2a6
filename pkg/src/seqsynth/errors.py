"""Exception hierarchy shared across the package.

Each class corresponds to one failure category surfaced to callers (and,
through the CLI, to a stable exit code).
"""


class SeqSynthError(Exception):
    """Base class for all package errors."""


class SchemaError(SeqSynthError):
    """Input file is missing required columns or is structurally malformed."""


class ValidationError(SeqSynthError):
    """Input data violates a documented invariant (negative time, bad index, ...)."""


class ConfigError(SeqSynthError):
    """A configuration value is out of its documented domain."""


class ContractError(SeqSynthError):
    """An internal call violated a function contract (shape/ordering/etc.)."""


class DomainError(SeqSynthError):
    """An argument lies outside the mathematical domain of an operation."""


class EvaluationError(SeqSynthError):
    """A numerical evaluation produced a non-finite value."""


class TruncationError(SeqSynthError):
    """A sequence does not fit the configured maximum length."""


class SplitError(SeqSynthError):
    """Train/test split cannot be formed from the given subjects."""


class PoisonedGradientError(SeqSynthError):
    """A NaN appeared during backpropagation; carries the offending node label."""


class TrainingDivergedError(SeqSynthError):
    """Training loss became non-finite; carries the last finite checkpoint."""

    def __init__(self, message, last_good_state=None):
        super().__init__(message)
        self.last_good_state = last_good_state


class HorizonError(SeqSynthError):
    """Survival mass failed to decay below threshold within the max horizon."""


class UndefinedMetricError(SeqSynthError):
    """A metric is undefined on the given data (e.g. single-class labels)."""


class VocabularyMismatchError(ValidationError):
    """Data refers to event names outside the governing vocabulary."""


class CheckpointVersionError(SeqSynthError):
    """Checkpoint format/version is incompatible with this build."""


class SimulationAbortError(SeqSynthError):
    """Simulator detected a runaway intensity and stopped."""
