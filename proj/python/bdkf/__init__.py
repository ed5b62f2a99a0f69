"""Block-diagonal Kalman filter core (C++ extension)."""

from ._bdkf import *  # noqa: F401,F403
from ._bdkf import (
    ConvergenceError,
    CoupledSystem,
    DomainError,
    ShapeError,
    SingularityError,
    ValidationError,
)

__all__ = [name for name in dir() if not name.startswith("_")]
