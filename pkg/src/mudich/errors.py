"""Exception hierarchy shared by all modules."""


class MudichError(Exception):
    """Base class for every error raised by :mod:`mudich`."""


class DomainError(MudichError, ValueError):
    """An argument lies outside the domain of an operation."""


class InvalidWitnessError(MudichError, ValueError):
    """A growth-condition witness violates ``q_n >= n + 1`` or monotonicity."""


class HorizonTooSmallError(MudichError, ValueError):
    """A search could not be completed within the available range."""


class OrderingError(MudichError, ValueError):
    """Time indices were given in the wrong order."""


class EvaluationError(MudichError, ArithmeticError):
    """A norm or operator-norm evaluation produced a non-finite value."""


class NonInvertibleError(MudichError, ArithmeticError):
    """A restricted map that must be invertible is numerically singular."""

    def __init__(self, message, k=None):
        super().__init__(message)
        self.k = k


class SplittingError(MudichError, ValueError):
    """A projection family is not a valid splitting."""


class MembershipError(MudichError, ValueError):
    """A sequence does not satisfy the boundary condition ``x_1 in Z``."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SingularSystemError(MudichError, ArithmeticError):
    """The truncated admissibility system is singular."""


class BoundaryContaminationError(MudichError, ArithmeticError):
    """Recovered projections are corrupted by the truncation boundary."""


class DivergenceError(MudichError, ArithmeticError):
    """The supremum defining an adapted norm does not appear to converge."""


class ConfigError(MudichError, ValueError):
    """A configuration file could not be parsed or validated."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
