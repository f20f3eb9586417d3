"""Exception hierarchy.

Every error carries a short machine-readable ``code`` (the class name) so the
CLI can map it to an exit status.
"""


class TabxError(Exception):
    exit_code = 1

    @property
    def code(self) -> str:
        return type(self).__name__


class DataError(TabxError, ValueError):
    exit_code = 2


class NumericError(TabxError, ArithmeticError):
    exit_code = 3


class MissingColumn(DataError):
    pass


class NonNumericCell(DataError):
    def __init__(self, row: int, col: str, value: str = ""):
        super().__init__(f"non-numeric cell {value!r} at row {row}, column {col!r}")
        self.row = row
        self.col = col


class EmptyFile(DataError):
    pass


class DuplicateHeader(DataError):
    pass


class DegenerateSplit(DataError):
    pass


class InvalidConfig(DataError):
    # a bad parameter is a usage problem, not bad data
    exit_code = 1


class MissingFile(DataError):
    pass


class KTooLarge(DataError):
    pass


class InvalidFeature(DataError):
    pass


class EmptySample(DataError):
    pass


class MismatchedFeatureSpaces(DataError):
    pass


class TooManyFeatures(DataError):
    def __init__(self, k: int, limit: int = 12):
        super().__init__(f"exact Shapley enumeration limited to {limit} features, got {k}")
        self.k = k


class EmptyNode(DataError):
    pass


class ZeroVariance(DataError):
    pass


class NoRulesSurviveFilter(DataError):
    pass


class NoCounterfactualFound(DataError):
    def __init__(self, budget: int):
        super().__init__(f"no counterfactual found within {budget} candidate evaluations")
        self.budget = budget


class ShapeMismatch(TabxError, ValueError):
    exit_code = 2


class SwitchOutOfRange(ShapeMismatch):
    pass


class GraphCycle(NumericError):
    pass


class NonFiniteLoss(NumericError):
    def __init__(self, epoch: int, detail: str = ""):
        msg = f"non-finite loss at epoch {epoch}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.epoch = epoch
