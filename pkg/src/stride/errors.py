"""Exception hierarchy shared across the engine.

The ``exit_code`` attribute is the CLI process exit status: 2 for usage
and configuration problems, 3 for malformed data, 4 for numerical
failures.
"""


class StrideError(Exception):
    """Base class for all engine errors."""

    exit_code = 1


class ConfigError(StrideError):
    """Invalid configuration, option, or argument combination."""

    exit_code = 2


class DomainError(StrideError):
    """Operation applied outside its mathematical domain."""

    exit_code = 2


class DataError(StrideError):
    """Malformed, missing, or non-finite input data."""

    exit_code = 3


class SchemaError(DataError):
    """Input does not match the schema the model was fitted with."""

    exit_code = 3


class ModelVersionError(DataError):
    """Model archive carries an unsupported format version."""

    exit_code = 3


class NumericalError(StrideError):
    """A numerical computation failed or a metric is undefined."""

    exit_code = 4
