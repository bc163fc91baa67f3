"""Exception hierarchy shared by the library and the command line."""
from typing import Optional, Tuple


class SplinecosError(Exception):
    """Base class for every error raised by splinecos."""


class ValidationError(SplinecosError, ValueError):
    """Invalid input, configuration or model specification."""


class DomainError(ValidationError):
    """A support or evaluation point lies outside a basis domain."""

    def __init__(self, message: str, row: Optional[int] = None,
                 extent: Optional[Tuple[float, ...]] = None):
        super().__init__(message)
        self.row = row
        self.extent = extent


class FactorizationError(SplinecosError, ArithmeticError):
    """A precision matrix could not be Cholesky factorized."""


class SamplerError(SplinecosError, RuntimeError):
    """A Gibbs chain failed; carries the chain and iteration where it happened."""

    def __init__(self, message: str, chain: Optional[int] = None,
                 iteration: Optional[int] = None):
        super().__init__(message)
        self.chain = chain
        self.iteration = iteration


class SimulationError(SplinecosError, RuntimeError):
    """A scenario generator could not produce a valid configuration."""


class StorageError(SplinecosError, OSError):
    """A file could not be read or written, or a store is malformed."""
