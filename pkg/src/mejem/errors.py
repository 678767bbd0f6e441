"""Exception hierarchy. Each family maps onto a CLI exit code."""


class MejemError(Exception):
    exit_code = 1


class ConfigError(MejemError):
    exit_code = 1


class ContractError(MejemError):
    """A precondition of an operation was violated by the caller."""

    exit_code = 1


class DimensionError(ContractError, ValueError):
    exit_code = 1


class DataError(MejemError):
    exit_code = 2


class MetricError(DataError, ValueError):
    pass


class CalibrationError(DataError, ValueError):
    pass


class DivergenceError(MejemError):
    """Non-finite loss or energy collapse during training."""

    exit_code = 3

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
