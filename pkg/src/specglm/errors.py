"""Exception types shared across the package."""


class SpecGlmError(Exception):
    """Base class for all package errors."""


class PoleHit(SpecGlmError):
    """A rational expectation was evaluated too close to a pole."""


class NonFinite(SpecGlmError):
    """An integrand produced NaN or infinity on the quadrature grid."""


class UnsupportedLink(SpecGlmError):
    """The link has no conditional density evaluator or analytic reduction."""


class DegenerateLink(SpecGlmError):
    """No informative preprocessing exists (the threshold is infinite)."""


class ADomain(SpecGlmError):
    """An evaluation point `a` is not above the preprocessing supremum."""


class BracketFail(SpecGlmError):
    """A bracketed root search exhausted its expansion budget."""


class NoCriticalPoint(SpecGlmError):
    """The derivative of the bulk map had no sign change on the scan grid."""


class InvariantViolation(SpecGlmError):
    """A solver produced values contradicting a structural guarantee."""


class NotPositiveDefinite(SpecGlmError):
    """A covariance matrix has a non-positive eigenvalue."""


class ConvergenceFail(SpecGlmError):
    """An iterative eigensolver did not converge within its budget."""


class ConfigError(SpecGlmError):
    """An experiment configuration is malformed."""
