"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line front end can map
failures onto its documented status codes without inspecting messages.
"""


class KolmolabError(Exception):
    exit_code = 3


class InvalidInputError(KolmolabError, ValueError):
    exit_code = 2


class ConfigError(InvalidInputError):
    """Schema or consistency failure in a model configuration.

    ``path`` names the offending key (``"A"``, ``"jordan.rotations[0]"``...).
    """

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class PreconditionError(InvalidInputError):
    """An operation was called outside its hypotheses."""

    def __init__(self, message: str, reason: str = "precondition"):
        self.reason = reason
        super().__init__(message)


class DomainError(InvalidInputError):
    pass


class NumericError(KolmolabError):
    exit_code = 3


class NotPositiveDefiniteError(NumericError):
    def __init__(self, s, detail: str = ""):
        self.s = s
        msg = f"covariance not positive definite at s={s!r}"
        super().__init__(msg + (f" ({detail})" if detail else ""))


class ConvergenceError(NumericError):
    pass


class PropertyViolation(KolmolabError):
    """A numerically checked property failed."""

    exit_code = 1

    def __init__(self, message: str, details: dict | None = None):
        self.details = details or {}
        super().__init__(message)


class HypoellipticityViolation(PropertyViolation):
    pass


class CertificateError(PropertyViolation):
    pass


class ConsistencyError(PropertyViolation):
    pass
