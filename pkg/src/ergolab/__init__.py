"""Inducing schemes, transfer operators and limit-law diagnostics for
piecewise smooth interval maps with critical/singular points."""

from .maps import (
    Branch,
    Formula,
    Observable,
    OneSidedCriticalPoint,
    PiecewiseMap,
    builtin_map,
    load_map,
    verify_expansion,
    verify_order,
)

__all__ = [
    "Branch",
    "Formula",
    "Observable",
    "OneSidedCriticalPoint",
    "PiecewiseMap",
    "builtin_map",
    "load_map",
    "verify_expansion",
    "verify_order",
]

__version__ = "0.1.0"
