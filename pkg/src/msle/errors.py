"""Exception hierarchy.

Three families map onto CLI exit codes: configuration problems (2), data
problems (3) and numerical failures (4).
"""


class MSLEError(Exception):
    exit_code = 1


class ConfigInvalid(MSLEError, ValueError):
    exit_code = 2


class DataError(MSLEError):
    exit_code = 3


class NumericalError(MSLEError, ArithmeticError):
    exit_code = 4


# configuration
class BandwidthZero(ConfigInvalid):
    pass


class KTooLarge(ConfigInvalid):
    pass


class EmbedDimTooLarge(ConfigInvalid):
    pass


# data
class NonFinite(DataError, ValueError):
    pass


class ShapeMismatch(DataError, ValueError):
    pass


class LayoutNotFound(DataError, FileNotFoundError):
    pass


class RaggedRows(DataError):
    def __init__(self, path, row, expected, got):
        self.path, self.row, self.expected, self.got = path, row, expected, got
        super().__init__(f"{path}: row {row} has {got} fields, expected {expected}")


class NonNumericCell(DataError):
    def __init__(self, path, row, col, value):
        self.path, self.row, self.col, self.value = path, row, col, value
        super().__init__(f"{path}: non-numeric cell {value!r} at row {row}, column {col}")


class SchemaVersionMismatch(DataError):
    pass


class DegenerateData(DataError):
    pass


class EmptyView(DataError):
    pass


class EmptyTrain(DataError):
    pass


class SingleClassTrain(DataError):
    pass


# numerics
class NoConvergence(NumericalError):
    pass


class SingularMass(NumericalError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


class IsolatedVertex(NumericalError):
    pass


class ZeroEigenvalue(NumericalError):
    pass


class DivergenceDetected(NumericalError):
    pass
