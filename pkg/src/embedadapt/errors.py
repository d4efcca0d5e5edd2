"""Exception hierarchy for embedadapt.

Every failure mode surfaced by the library raises a subclass of
:class:`EmbedAdaptError`, so callers (and the CLI) can distinguish data or
contract problems (exit code 1) from genuine bugs.
"""


class EmbedAdaptError(Exception):
    """Base class for all embedadapt errors."""


class ValidationError(EmbedAdaptError):
    """An invariant or operation precondition was violated."""


class DegenerateInputError(ValidationError):
    """Numerically degenerate input, e.g. a zero vector where a direction is needed."""


class FormatError(EmbedAdaptError):
    """A file is not in the expected format (bad magic, unsupported version)."""


class CorruptionError(FormatError):
    """A file has the right format but inconsistent or truncated content."""


class PairingError(EmbedAdaptError):
    """Two embedding sets share no keys, so no training pairs exist."""


class CalibrationError(EmbedAdaptError):
    """An operating point cannot be calibrated (e.g. no impostor scores)."""


class RankDeficiencyError(EmbedAdaptError):
    """The closed-form normal equations are singular; suggests adding ridge."""
