"""Exception types shared across the package."""


class PsldError(Exception):
    """Base class for package errors."""


class ConfigError(PsldError):
    """Malformed or inconsistent configuration (CLI exit code 2)."""


class NumericError(PsldError):
    """Numerical failure at runtime: NaN/Inf states, failed factorizations,
    ODE step-size underflow (CLI exit code 3)."""
