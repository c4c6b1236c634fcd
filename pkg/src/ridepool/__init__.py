"""Ride-pool fleet dispatch: batched request-to-vehicle matching by exact
branch-and-bound over feasible request groups, with an optionally learned
per-vehicle value function steering assignments toward future demand."""

from .errors import (
    ConfigError,
    ContractError,
    NetworkError,
    NumericError,
    RidepoolError,
    SimulationIntegrityError,
    SolverLimitError,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "NetworkError",
    "NumericError",
    "RidepoolError",
    "SimulationIntegrityError",
    "SolverLimitError",
]

__version__ = "0.1.0"
