class ValidationError(ValueError):
    """Input failed a contract check (bad scores, bad parameters, bad files)."""


class SeparableDataError(ValidationError):
    """Unregularized logistic training diverged on (nearly) separable data."""
