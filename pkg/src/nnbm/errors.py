"""Exception hierarchy shared by the solvers and the command line.

Every exception carries the process exit code the CLI maps it to.
"""


class NnbmError(Exception):
    exit_code = 1


class DomainError(NnbmError, ValueError):
    """Invalid input: negative data, malformed model, bad shapes."""

    exit_code = 5


class ConvergenceError(NnbmError):
    """An iteration ran out of budget before reaching its tolerance."""

    exit_code = 3

    def __init__(self, message, residual=None, trace=None):
        super().__init__(message)
        self.residual = residual
        self.trace = trace if trace is not None else []


class StabilityError(NnbmError):
    """A conjugate precision r_i dropped below its positivity floor."""

    exit_code = 4


class StateError(NnbmError):
    """A state does not satisfy the fixed point it is claimed to satisfy."""

    exit_code = 5


class DegenerateError(DomainError):
    exit_code = 5


class UnsupportedSizeError(NnbmError):
    exit_code = 6


class AccuracyError(NnbmError):
    exit_code = 3


class LearningError(NnbmError):
    exit_code = 3

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class DivergenceError(LearningError):
    exit_code = 3
