"""Exception hierarchy. Each family maps to a CLI exit code."""


class SimSohError(Exception):
    exit_code = 1


class ConfigError(SimSohError, ValueError):
    """Invalid configuration: bad keys, empty axes, impossible proportions."""

    exit_code = 2


class DataError(SimSohError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class DomainError(DataError):
    """Argument outside the mathematical domain of an operation."""


class TraceFormatError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(DataError):
    pass


class DegenerateLabelError(DataError):
    pass


class NumericError(SimSohError, ArithmeticError):
    exit_code = 4


class CovarianceError(NumericError):
    pass


class SimulationError(NumericError):
    def __init__(self, message, last_valid_time=None):
        self.last_valid_time = last_valid_time
        if last_valid_time is not None:
            message = f"{message} (last valid time {last_valid_time:g} s)"
        super().__init__(message)


class TrainingError(NumericError):
    def __init__(self, message, epoch=None):
        self.epoch = epoch
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)
