class GenchoiceError(Exception):
    """Base class for errors raised by the package."""


class SchemaError(GenchoiceError, ValueError):
    """Variable declarations are inconsistent or do not match the data columns."""


class IngestionError(GenchoiceError, ValueError):
    """A raw record cannot be encoded (bad value, unseen level, non-finite)."""


class ConfigError(GenchoiceError, ValueError):
    """Experiment configuration is malformed."""


class NumericalError(GenchoiceError, ArithmeticError):
    """Training produced non-finite values."""

    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block
