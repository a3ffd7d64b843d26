"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad inputs or configuration: wrong shapes, ranges, or preconditions."""


class ContractError(RuntimeError):
    """A numerical contract failed at runtime (verification, gap, convergence)."""


class PhiDomainError(ValidationError):
    """A profile curve was evaluated outside its stored t-range."""
