"""Exception hierarchy shared across the package."""


class MaskSurvError(Exception):
    """Base class for every error raised by masksurv."""


class DimensionError(MaskSurvError, ValueError):
    pass


class AllMaskedError(MaskSurvError, ValueError):
    """A softmax row had every position masked out."""


class EmptyPoolError(MaskSurvError, ValueError):
    """Masked mean pooling over zero available rows (e.g. a patient with no features)."""


class ContractError(MaskSurvError, ValueError):
    pass


class NumericError(MaskSurvError, FloatingPointError):
    pass


class SchemaError(MaskSurvError, ValueError):
    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class DegenerateColumnError(MaskSurvError, ValueError):
    pass


class EncodingError(MaskSurvError, ValueError):
    pass


class ParameterError(MaskSurvError, ValueError):
    pass


class StratificationError(MaskSurvError, ValueError):
    pass


class UndefinedMetricError(MaskSurvError, ValueError):
    """No acceptable (comparable) pair exists, so concordance is undefined."""


class ImputationError(MaskSurvError, ValueError):
    pass


class FitError(MaskSurvError, ValueError):
    pass


class DivergenceError(MaskSurvError, RuntimeError):
    pass


class ComplexityError(MaskSurvError, ValueError):
    pass


class ConfigurationError(MaskSurvError, ValueError):
    pass
