"""Exception types shared across the toolkit."""


class RetestKitError(Exception):
    """Base class for all toolkit errors."""


class DomainError(RetestKitError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class EstimationError(RetestKitError):
    """An estimator could not produce a valid estimate.

    Carries whatever intermediate quantities are useful for diagnosis
    (e.g. the standardized moments that produced no admissible root).
    """

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context


class EvaluationError(RetestKitError):
    """A numeric evaluation failed (non-finite likelihood, failed mode search)."""


class DataFormatError(RetestKitError, ValueError):
    """An input file violates the documented schema."""
