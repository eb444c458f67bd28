"""Exception types shared across the package."""


class BattentionError(Exception):
    """Base class for all package errors."""


class ValidationError(BattentionError, ValueError):
    """Input data violates a documented precondition."""


class ParameterError(BattentionError, ValueError):
    """A numeric parameter is outside its admissible range."""


class UndefinedSimilarityError(ValidationError):
    """Cosine similarity requested for a zero vector."""


class UndefinedENRError(ValidationError):
    """Edge noise rate requested for a node without neighbors."""


class InfeasibleBoundError(ParameterError):
    """A minimum-pool-size bound is singular or infinite for the model."""


class NumericError(BattentionError, ArithmeticError):
    """Non-finite value encountered during a forward or backward pass."""
