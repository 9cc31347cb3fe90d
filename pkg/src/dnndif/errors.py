"""Exception types shared across the package."""


class DnnDifError(Exception):
    """Base class for all package errors."""


class ConfigError(DnnDifError, ValueError):
    """Invalid configuration or parameter values."""


class FormatError(DnnDifError, ValueError):
    """A file or document does not match its declared format."""


class ShapeError(DnnDifError, ValueError):
    """Array or dataset dimensions disagree with what the caller declared."""


class DegenerateLabelsError(DnnDifError, ValueError):
    """Labels contain a single class, so ROC quantities are undefined."""


class RankDeficientError(DnnDifError, ValueError):
    """Design matrix of a regression does not have full column rank."""
