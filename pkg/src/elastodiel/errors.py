"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to:
2 for invalid input, 3 for solver failures, 4 for resource caps.
"""


class ElastodielError(Exception):
    exit_code = 3


class ConfigError(ElastodielError):
    exit_code = 2


class GeometryError(ElastodielError):
    exit_code = 2


class OverlapError(GeometryError):
    pass


class DisconnectedMatrixError(GeometryError):
    pass


class SupportError(GeometryError):
    pass


class ResolutionError(ElastodielError):
    exit_code = 2


class EllipticityError(ElastodielError):
    pass


class ContrastError(ElastodielError):
    pass


class NonNeutralChargeError(ElastodielError):
    pass


class ConvergenceError(ElastodielError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class BoundViolationError(ElastodielError):
    pass


class FormulaMismatchError(ElastodielError):
    pass


class NegativeKappaError(ElastodielError):
    pass


class SingularSystemError(ElastodielError):
    pass


class FitError(ElastodielError):
    pass


class GridMismatchError(ElastodielError):
    pass


class MemoryBudgetError(ElastodielError):
    exit_code = 4
