"""Transfer-learning enhanced discrete PINNs for evolutionary PDEs."""

import jax

# Everything runs in float64; the second-order time error is invisible at float32.
jax.config.update("jax_enable_x64", True)

from tldpinn.errors import (  # noqa: E402
    ConfigError,
    DegenerateReference,
    DomainError,
    NumericalOverflow,
    OracleDiverged,
    OrderError,
    ShapeError,
    UnknownProblem,
    UnknownScheme,
    UnsupportedPrimitive,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegenerateReference",
    "DomainError",
    "NumericalOverflow",
    "OracleDiverged",
    "OrderError",
    "ShapeError",
    "UnknownProblem",
    "UnknownScheme",
    "UnsupportedPrimitive",
]
