"""Exception types shared across the package."""


class QuorumClustError(Exception):
    """Base class for package errors."""


class RadiusUnderflowError(QuorumClustError):
    """An influence radius fell below the permitted floor."""


class DatasetFormatError(QuorumClustError):
    """Input file or payload violates the expected dataset format."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DegenerateColonyError(QuorumClustError):
    """A colony has zero intra-connection mass (isolated or empty)."""


class StreamEventError(QuorumClustError):
    """A stream event references an unknown cell or is out of order."""


class NumericBlowupError(QuorumClustError):
    """The dynamics produced non-finite or runaway values (dt too large).

    Carries a diagnostic snapshot of the state at the moment of the abort.
    """

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}
