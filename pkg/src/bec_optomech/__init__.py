"""Truncated Fock-space simulator for a BEC coupled to a cavity mode with the roles of light and matter exchanged."""

__version__ = "0.1.0"

from .dynamics import SystemParams, analytic_state, evolve, evolve_numeric  # noqa: E402
from .fock import DensityOperator, ModeSpace, StateVector  # noqa: E402
from .protocols import CatSpec, WignerPoint, cat_target, wigner_direct  # noqa: E402

__all__ = [
    "CatSpec",
    "DensityOperator",
    "ModeSpace",
    "StateVector",
    "SystemParams",
    "WignerPoint",
    "analytic_state",
    "cat_target",
    "evolve",
    "evolve_numeric",
    "wigner_direct",
]
