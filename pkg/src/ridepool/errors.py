"""Exception types shared across the package."""


class RidepoolError(Exception):
    """Base class for all package errors."""


class NetworkError(RidepoolError):
    """Road network construction or lookup failure."""


class ContractError(RidepoolError):
    """A caller violated a documented precondition."""


class ConfigError(RidepoolError):
    """Invalid run configuration."""


class SimulationIntegrityError(RidepoolError):
    """An internal consistency check failed -- indicates a bug upstream,
    not a recoverable state (e.g. a stop consumed after its deadline)."""


class SolverLimitError(RidepoolError):
    """Branch-and-bound node limit exceeded in strict mode."""


class NumericError(RidepoolError):
    """Non-finite value produced where a finite one is required."""
