"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ShapeError(DimensionError):
    """A tensor violates a shape invariant (congruence, divisibility, channels)."""


class ConfigError(ValueError):
    """Invalid hyperparameter or configuration value."""


class DomainError(ValueError):
    """A scalar argument lies outside its admissible range."""


class EvaluationError(ArithmeticError):
    """A computation produced a non-finite value."""
