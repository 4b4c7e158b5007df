"""Shared exception types with machine-readable categories.

Every error the CLI can surface carries a stable ``category`` string so
scripts can branch on failures without parsing prose.
"""


class BofError(Exception):
    """Base class for all package errors."""

    category = "error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ContractError(BofError):
    """A caller violated a documented precondition (shape, range, ...)."""

    category = "contract-violation"


class ConfigError(BofError):
    """Malformed or unknown configuration input."""

    category = "config-error"


class NumericsError(BofError):
    """NaN/Inf showed up where finite values are required."""

    category = "numerics-error"
