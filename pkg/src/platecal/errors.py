"""Exception hierarchy shared by the calibration modules."""


class CalibrationError(Exception):
    """Base class. ``code`` is a short machine-readable tag used in messages."""

    code = "calibration-error"

    def __init__(self, message: str = ""):
        text = f"{self.code}: {message}" if message else self.code
        super().__init__(text)


class DomainError(CalibrationError, ValueError):
    code = "domain-error"


class UnreachableError(CalibrationError):
    code = "unreachable"


class CenteringError(CalibrationError):
    """Beam centering did not converge."""

    code = "no-convergence"


class UnderdeterminedError(CalibrationError):
    code = "underdetermined"


class SingularSystemError(CalibrationError):
    code = "singular-system"

    def __init__(self, message: str = "", condition_number: float = float("inf"),
                 null_directions=None):
        super().__init__(message)
        self.condition_number = condition_number
        self.null_directions = list(null_directions or [])


class DivergedError(CalibrationError):
    code = "diverged"


class BoundInfeasibleError(CalibrationError, ValueError):
    code = "bound-infeasible"


class AlreadyExactError(CalibrationError, ZeroDivisionError):
    code = "already exact"


class SchemaError(CalibrationError, ValueError):
    """Configuration or data file does not match its schema."""

    code = "schema-error"
