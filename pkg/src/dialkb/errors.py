"""Exception types shared across the package."""


class DialKBError(Exception):
    """Base class for all package errors."""


class ParseError(DialKBError, ValueError):
    """Input text could not be parsed. ``path`` locates the offending node."""

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ValidationError(DialKBError, ValueError):
    pass


class AlignmentError(DialKBError, ValueError):
    pass


class EmptyContextError(DialKBError, ValueError):
    pass


class UnknownRefError(DialKBError, LookupError):
    pass


class MissingDomainError(DialKBError, LookupError):
    pass


class ConfigError(DialKBError, ValueError):
    pass


class DegenerateTrainingError(DialKBError, ValueError):
    pass


class DegenerateValidationError(DialKBError, ValueError):
    pass


class EmptyCandidatesError(DialKBError, ValueError):
    pass


class ScorerUnavailable(DialKBError, RuntimeError):
    """A scoring backend could not answer.

    ``stage`` is filled in by the pipeline when the error crosses a stage
    boundary ("detection", "domain", "ranking", "generation").
    """

    def __init__(self, message, cause=None, stage=None):
        super().__init__(message)
        self.cause = cause
        self.stage = stage


class ProtocolError(ScorerUnavailable):
    """The gateway peer violated the message grammar or id contract."""


class GeneratorUnavailable(DialKBError, RuntimeError):
    def __init__(self, message, cause=None, stage="generation"):
        super().__init__(message)
        self.cause = cause
        self.stage = stage
