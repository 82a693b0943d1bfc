"""Exception hierarchy. The CLI maps these onto exit codes."""


class KgcastError(Exception):
    """Base class for all package errors."""


class ConfigurationError(KgcastError, ValueError):
    pass


class DimensionError(KgcastError, ValueError):
    pass


class NumericError(KgcastError, ArithmeticError):
    pass


class DivergenceError(NumericError):
    def __init__(self, epoch, learning_rate, detail=""):
        self.epoch = epoch
        self.learning_rate = learning_rate
        msg = f"non-finite loss at epoch {epoch} (learning rate {learning_rate})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class EmptyNeighborhoodError(KgcastError, ValueError):
    pass


class DataError(KgcastError, ValueError):
    """Input data failed validation."""


class ParseError(DataError):
    def __init__(self, lineno, detail):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {detail}")


class ReferentialError(DataError):
    pass


class WindowError(DataError):
    pass


class CoverageError(DataError):
    pass


class UndefinedMetricError(DataError):
    pass


class ConsistencyError(KgcastError, RuntimeError):
    pass


class CompatibilityError(DataError):
    pass


class IntegrityError(DataError):
    pass
