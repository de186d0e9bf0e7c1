"""Shared exception hierarchy.

Every error type carries a short ``category`` slug. The command line
front end prints it as a single machine-parsable line, so the slugs are
part of the public interface and should stay stable.
"""


class RomkitError(Exception):
    """Base class for all toolkit errors."""

    category = "internal-error"


class ContractViolationError(RomkitError):
    """An argument violated a documented shape or type contract."""

    category = "contract-violation"


class ConfigurationError(RomkitError):
    """A configuration value is out of its admissible range."""

    category = "config-error"


class NumericalDomainError(RomkitError):
    """A computation left the numerical domain it is defined on."""

    category = "numerical-domain"


class IntegrationBlowupError(NumericalDomainError):
    """Non-finite values appeared while integrating the plant."""

    category = "integration-blowup"


class SteadyStateError(NumericalDomainError):
    """The steady-state search did not converge."""

    category = "steady-state-failure"


class DecompositionError(NumericalDomainError):
    """A matrix factorization failed to converge."""

    category = "decomposition-failure"


class TrainingDivergenceError(NumericalDomainError):
    """Training produced non-finite losses or parameters."""

    category = "training-divergence"


class FilterDivergenceError(NumericalDomainError):
    """A state estimator produced non-finite quantities."""

    category = "filter-divergence"


class SingularUpdateError(NumericalDomainError):
    """The innovation covariance in a filter update was not positive definite."""

    category = "singular-update"


class MissingArtifactError(RomkitError):
    """A pipeline stage needs an artifact that has not been produced yet."""

    category = "missing-artifact"
