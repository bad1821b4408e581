"""
Exception types

Each error subclasses the builtin a caller would naturally catch, so
`except ValueError` keeps working for code that does not care about the kind.
"""


class ConfigError(ValueError):
    """Invalid configuration. `fields` lists every offending field."""

    def __init__(self, message: str, fields: list[str] | None = None):
        self.fields = list(fields or [])
        if self.fields:
            message = f"{message}: {', '.join(self.fields)}"
        super().__init__(message)


class IdxFormatError(ValueError):
    """IDX header magic does not match the expected tensor kind."""


class IdxLengthError(ValueError):
    """IDX payload shorter than its header announces."""


class ConsistencyError(ValueError):
    """Shapes, counts or architectures that must agree do not."""


class CapacityError(ValueError):
    """Requested split sizes exceed the available pool."""


class FoldIndexError(IndexError):
    """Fold index outside [0, k)."""


class UnknownTaskError(KeyError):
    """No output head exists for the requested task."""


class NumericError(ArithmeticError):
    """Non-finite values met in inputs, gradients or losses."""

    def __init__(self, message: str, param: str | None = None):
        self.param = param
        super().__init__(message if param is None else f"{message} (parameter {param})")


class HeadConflictError(ValueError):
    """An output head already exists for the task id."""


class UnsupportedOperationError(ValueError):
    """Surgery requested on something that is not a hidden node."""


class StaleNodeError(IndexError):
    """NodeId does not exist in the current architecture."""


class EmptyInputError(ValueError):
    """Accuracy requested over an empty set."""


class CacheIntegrityError(ValueError):
    """Container file failed its checksum or header validation."""


class TrainingAborted(RuntimeError):
    """Training stopped on a numeric error; `last_finite` holds the last good weights."""

    def __init__(self, message: str, last_finite=None, cause: Exception | None = None):
        self.last_finite = last_finite
        self.cause = cause
        super().__init__(message)


class RunExistsError(FileExistsError):
    """A run with the same config hash already exists and --force was not given."""
