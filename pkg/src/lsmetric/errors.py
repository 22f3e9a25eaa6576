"""Exception hierarchy.

Every error carries a short ``code`` string (``E_DIM``, ``E_UNSTABLE`` ...)
that the command line front end prints as its diagnostic.
"""


class LSMetricError(Exception):
    code = "E_GENERIC"

    def __str__(self):
        msg = super().__str__()
        return f"{self.code}: {msg}" if msg else self.code


class DimensionError(LSMetricError, ValueError):
    code = "E_DIM"


class IndexRangeError(LSMetricError, IndexError):
    code = "E_RANGE"


class SingularError(LSMetricError, ArithmeticError):
    code = "E_SINGULAR"


class UnstableError(LSMetricError, ArithmeticError):
    code = "E_UNSTABLE"


class ConvergenceError(LSMetricError, ArithmeticError):
    code = "E_CONVERGENCE"


class BadNoiseError(LSMetricError, ValueError):
    code = "E_BADNOISE"


class ParseError(LSMetricError, ValueError):
    code = "E_PARSE"
