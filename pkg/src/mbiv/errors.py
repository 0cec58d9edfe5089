"""Exception hierarchy. Each class carries the CLI exit code of its stage."""


class MbivError(Exception):
    exit_code = 1


class UsageError(MbivError, ValueError):
    exit_code = 1


class DataError(MbivError, ValueError):
    exit_code = 2


class NumericError(MbivError, ArithmeticError):
    exit_code = 3


class BoundExceeded(MbivError, ValueError):
    exit_code = 4


class GraphError(MbivError, ValueError):
    """Invalid graph operation (cycle, unknown vertex, unresolved orientation)."""

    exit_code = 2
