"""Custom exception classes.

Every error carries the process exit code the command line reports for it:
2 for input validation, 3 for numerical failures.
"""

from typing import Any, Optional


class ProfilingError(Exception):
    """Base class for all domain errors."""

    exit_code: int = 1

    def __init__(self, message: str):
        self.message = message
        super().__init__(message)


class InputValidationError(ProfilingError):
    """Exception for malformed or insufficient input data."""

    exit_code = 2


class NumericalError(ProfilingError):
    """Exception for numerical failures (non-convergence, singularity)."""

    exit_code = 3


class RankDeficientError(NumericalError):
    """Design matrix does not have full column rank."""

    def __init__(self, column: str):
        self.column = column
        super().__init__(f"Design matrix is rank deficient: column '{column}' is collinear")


class ConvergenceError(NumericalError):
    """Iteration cap reached; carries the last iterate."""

    def __init__(self, message: str, last_iterate: Any = None, iterations: int = 0):
        self.last_iterate = last_iterate
        self.iterations = iterations
        super().__init__(message)


class SeparationError(ConvergenceError):
    """Logistic fit diverges: constant outcome or quasi-separation."""


class SingularMatrixError(NumericalError):
    """Conditioning matrix is numerically singular."""

    def __init__(self, message: str, condition: Optional[float] = None):
        self.condition = condition
        if condition is not None:
            message = f"{message} (condition number {condition:.3e})"
        super().__init__(message)


class NonIdentifiableError(NumericalError):
    """A pair of years has too few joint observations."""

    def __init__(self, pair: tuple, count: int):
        self.pair = pair
        self.count = count
        super().__init__(
            f"Covariance for years {pair[0]} and {pair[1]} is not identifiable: "
            f"only {count} centre(s) observed in both"
        )


class UninformativeCentreError(ProfilingError):
    """Bernoulli information of a centre-year is below threshold."""

    def __init__(self, centre_id: str, year: int, information: float):
        self.centre_id = centre_id
        self.year = year
        self.information = information
        super().__init__(
            f"Centre {centre_id} in {year} has information {information:.3e} "
            "below threshold"
        )
