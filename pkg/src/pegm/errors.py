"""Exception hierarchy shared by every module of the package."""


class PEGMError(Exception):
    """Base class for package errors."""


class ConstraintViolation(PEGMError, ValueError):
    """Parameter matrix outside the family's parameter space."""


class DomainError(PEGMError, ValueError):
    """Observation or parameter outside the family's support."""


class ContractError(PEGMError, ValueError):
    """Inputs violate an operation's preconditions (shapes, masks, batches)."""


class ConfigurationError(PEGMError, ValueError):
    """Invalid configuration value."""


class DegeneracyError(PEGMError, RuntimeError):
    """Importance weights collapsed; the estimate is meaningless.

    Attributes
    ----------
    ess : float
        Effective sample size of the weights at failure time.
    """

    def __init__(self, message, ess=float("nan")):
        super().__init__(message)
        self.ess = ess


class DivergenceError(PEGMError, RuntimeError):
    """An iterative fit failed to converge or ran away."""


class OverflowDiagnostic(PEGMError, FloatingPointError):
    """A conditional rate would overflow; names the offending node."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class PartialSampleError(PEGMError, RuntimeError):
    """Sampler ran out of tries before producing every requested row.

    Attributes
    ----------
    rows : numpy.ndarray
        The accepted rows gathered so far.
    acceptance_rate : float
        Empirical acceptance rate over all proposals.
    """

    def __init__(self, message, rows, acceptance_rate):
        super().__init__(message)
        self.rows = rows
        self.acceptance_rate = acceptance_rate


class ResourceError(PEGMError, RuntimeError):
    """Requested computation exceeds an enumeration or runtime guard."""


class SamplerDiagnosticError(PEGMError, RuntimeError):
    """MCMC diagnostics failed (e.g. acceptance collapsed after adaptation)."""
