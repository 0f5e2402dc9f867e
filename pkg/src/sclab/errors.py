"""Exception hierarchy shared by every sclab module."""

from __future__ import annotations


class SclabError(Exception):
    """Base class for all library errors."""


class DomainError(SclabError, ValueError):
    """An argument lies outside the documented domain of an operation."""


class RangeError(DomainError):
    """A xi-grid does not bracket the range of the field being lifted."""


class StabilityError(SclabError):
    """A time step violates the monotonicity/stability restriction.

    ``admissible_dt`` carries the largest step the stepper would accept.
    """

    def __init__(self, message: str, admissible_dt: float):
        super().__init__(message)
        self.admissible_dt = admissible_dt


class BlowUpError(SclabError):
    """The solution left the blow-up window; carries the step and time."""

    def __init__(self, message: str, step: int, time: float, max_abs: float):
        super().__init__(message)
        self.step = step
        self.time = time
        self.max_abs = max_abs


class CostError(SclabError):
    """A dense quadrature would exceed the desk-scale budget."""

    def __init__(self, message: str, estimated_ops: float, budget: float):
        super().__init__(message)
        self.estimated_ops = estimated_ops
        self.budget = budget


class InsufficientDataError(SclabError):
    """Too few usable rows to fit or extrapolate."""


class ConfigError(SclabError):
    """Configuration text failed validation.

    ``errors`` is a list of ``(line_number, message)`` pairs, one per problem
    found; line numbers are 1-based and 0 means "no specific line".
    """

    def __init__(self, errors: list[tuple[int, str]]):
        self.errors = list(errors)
        lines = [f"line {ln}: {msg}" if ln else msg for ln, msg in self.errors]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))
