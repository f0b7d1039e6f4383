"""Exception types shared across the package."""


class CrowdRoadError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(CrowdRoadError, ValueError):
    """A physical or statistical parameter violates its constraints."""


class ConfigError(CrowdRoadError, ValueError):
    """An experiment configuration failed validation (CLI exit code 2)."""


class NumericalError(CrowdRoadError, RuntimeError):
    """A numerical operation failed, e.g. a factorization or an
    ill-conditioned solve (CLI exit code 3)."""
