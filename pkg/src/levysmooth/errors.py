"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class UnsupportedError(NotImplementedError):
    """The operation is not available for this model configuration."""


class NotApplicableError(ValueError):
    """The operation is meaningless for this model (e.g. no Levy measure)."""
