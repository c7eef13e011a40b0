"""Exception hierarchy shared by all modules.

Exit-code mapping used by the CLI:
    ConfigError -> 2, DataError -> 3, DependencyError -> 4, NumericError -> 5.
"""


class DcasrError(Exception):
    pass


class ConfigError(DcasrError):
    pass


class DataError(DcasrError):
    pass


class FormatError(DataError):
    """Malformed input file (CSV, JSONL, checkpoint)."""


class EmptyDatasetError(DataError):
    pass


class DependencyError(DcasrError):
    """A pipeline stage was invoked before its upstream artifact exists."""


class NumericError(DcasrError):
    pass


class ShapeError(DcasrError):
    """Operand shapes disagree; message names both shapes."""


class InvalidInputError(DcasrError):
    pass


class ConsistencyError(DcasrError):
    """Internally inconsistent state, e.g. a parameter without a gradient."""


class ContractViolationError(DcasrError):
    """A user-supplied callable violated its interface contract."""
