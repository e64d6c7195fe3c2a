"""Exception classes shared across the package."""


class RejectedInputError(ValueError):
    """An argument violates a documented precondition."""


class ContractViolationError(RuntimeError):
    """An internal guarantee was broken by the caller (e.g. an empty candidate set)."""


class NumericalFailureError(ArithmeticError):
    """A non-finite value appeared where a finite one is required."""
