"""Exception hierarchy. CLI exit codes are attached to the three families."""


class MPCLError(Exception):
    exit_code = 1


class ConfigError(MPCLError, ValueError):
    exit_code = 2


class DataError(MPCLError):
    exit_code = 3


class NumericalError(MPCLError, ArithmeticError):
    exit_code = 4


class ShapeError(ConfigError):
    pass


class DegenerateEmbeddingError(NumericalError):
    """An embedding row has (near) zero norm; usually a collapsed encoder."""

    def __init__(self, message, rows=None, sample_ids=None):
        super().__init__(message)
        self.rows = rows
        self.sample_ids = sample_ids


class EmptyDenominatorError(NumericalError):
    pass


class InsufficientNegativesError(ConfigError):
    pass


class ProtocolError(MPCLError, RuntimeError):
    pass
