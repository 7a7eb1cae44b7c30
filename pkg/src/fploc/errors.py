"""Exception hierarchy shared by every fploc module."""


class FplocError(Exception):
    """Base class; the CLI maps subclasses of this to exit code 2."""


class ShapeError(FplocError, ValueError):
    pass


class LabelError(FplocError, ValueError):
    pass


class NumericError(FplocError, ArithmeticError):
    pass


class ValidationError(FplocError, ValueError):
    pass


class ConstructionError(FplocError, ValueError):
    pass


class DegenerateGeometryError(FplocError, ValueError):
    pass


class ContractError(FplocError, RuntimeError):
    pass


class SchemaError(FplocError, ValueError):
    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)


class ParseError(FplocError, ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ConfigError(FplocError, ValueError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class DivergenceError(FplocError, ArithmeticError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class EvaluationError(FplocError, ValueError):
    pass


class CompatibilityError(FplocError, ValueError):
    def __init__(self, message, fields=()):
        super().__init__(message)
        self.fields = list(fields)
