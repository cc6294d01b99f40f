"""Exception hierarchy shared by every module."""


class LabError(Exception):
    """Base class for all library errors."""


class NumericalFailure(LabError):
    pass


class InvalidLabel(LabError, ValueError):
    pass


class EmptyInput(LabError, ValueError):
    pass


class DimensionMismatch(LabError, ValueError):
    pass


class KinkTooClose(LabError):
    """A ReLU preactivation lies within the finite-difference stencil."""


class CoverageViolated(LabError):
    pass


class UnsupportedInner(LabError):
    """No Lipschitz certificate is available for this inner function."""


class NotCritical(LabError):
    pass


class HypothesisViolated(LabError, ValueError):
    pass


class ParseError(LabError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DimensionError(ParseError):
    pass


class EmptyDataset(ParseError):
    pass


class ConfigError(LabError, ValueError):
    pass
