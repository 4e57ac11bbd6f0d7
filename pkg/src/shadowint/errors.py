"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """Inputs violate a shape or dimension contract."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class FactorizationError(ArithmeticError):
    """Cholesky factorization failed; ``pivot`` is the 1-based failing leading minor."""

    def __init__(self, message, pivot):
        super().__init__(message)
        self.pivot = pivot


class ConvergenceError(ArithmeticError):
    """An implicit solve did not reach its residual tolerance."""

    def __init__(self, message, residual, step_index=None):
        super().__init__(message)
        self.residual = residual
        self.step_index = step_index


class ParseError(ValueError):
    """Malformed data file. ``line`` and ``column`` are 1-based."""

    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + loc)
        self.line = line
        self.column = column


class UnsupportedOrder(DomainError):
    """Requested truncation order is not available for this integrator."""
