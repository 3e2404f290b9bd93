"""Exception types shared across the package."""


class PhifitError(Exception):
    """Base class for all package-specific errors."""


class DomainError(PhifitError, ValueError):
    """An argument lies outside the domain of an operation."""


class SpecValidationError(PhifitError, ValueError):
    """A model specification violates its structural invariants."""


class DegenerateConstraintsError(PhifitError, ValueError):
    """The constraint system is rank deficient at the evaluation point."""


class InfeasibleObjectiveError(PhifitError, RuntimeError):
    """The objective is infinite for every admissible parameter value."""


class InternalConsistencyError(PhifitError, RuntimeError):
    """Two routes that must agree disagreed beyond tolerance."""
