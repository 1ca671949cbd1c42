"""Exception hierarchy. CLI exit codes hang off these classes."""


class AtdlError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ShapeError(AtdlError, ValueError):
    exit_code = 3


class ConfigError(AtdlError, ValueError):
    exit_code = 2


class DataFormatError(AtdlError, ValueError):
    exit_code = 3


class ArgumentError(AtdlError, ValueError):
    exit_code = 2


class DivergenceError(AtdlError, ArithmeticError):
    exit_code = 4

    def __init__(self, epoch, eta, message=None):
        self.epoch = epoch
        self.eta = eta
        super().__init__(message or f"loss became non-finite at epoch {epoch} (learning rate {eta:.3g})")


class SingularCovarianceError(AtdlError, ArithmeticError):
    exit_code = 4

    def __init__(self, label, suggested_epsilon=None):
        self.label = label
        self.suggested_epsilon = suggested_epsilon
        msg = f"regularized covariance for label {label!r} is not positive definite"
        if suggested_epsilon is not None:
            msg += f"; try --epsilon {suggested_epsilon:.3g}"
        super().__init__(msg)


class MissingClassError(AtdlError, ValueError):
    exit_code = 3

    def __init__(self, label):
        self.label = label
        super().__init__(f"no target samples for label {label!r}")


class UndefinedCorrelationError(AtdlError, ArithmeticError):
    exit_code = 4


class ConvergenceError(AtdlError, ArithmeticError):
    exit_code = 4
