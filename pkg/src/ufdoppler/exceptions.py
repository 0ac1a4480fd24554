"""Exception hierarchy shared across the package."""


class DimensionError(ValueError):
    """Array shapes are inconsistent with the declared sequence dims."""


class NumericError(ValueError):
    """Input contains NaN or infinite entries."""


class UFDFormatError(ValueError):
    """Base class for malformed UFD1 sequence files."""


class BadMagicError(UFDFormatError):
    pass


class TruncatedPayloadError(UFDFormatError):
    pass


class DimensionOverflowError(UFDFormatError):
    pass


class TrailingDataError(UFDFormatError):
    pass


class DivergenceError(RuntimeError):
    """Raised when a solver objective blows up past the guard factor."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class UndefinedContrastError(ValueError):
    """Reference patch has zero mean amplitude."""


class EmptySweepError(ValueError):
    """No admissible patch placement for a contrast sweep."""
