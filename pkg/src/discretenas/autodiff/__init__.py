"""Reverse-mode automatic differentiation on a recorded tape."""

from . import primitives
from .gradcheck import analytic_gradient, finite_difference_check, numeric_gradient
from .tensor import (
    ROLES,
    ContractError,
    Graph,
    NumericError,
    ParamStore,
    ShapeError,
    Tape,
    Tensor,
    default_dtype,
    set_default_dtype,
)

__all__ = [
    "ROLES", "ContractError", "Graph", "NumericError", "ParamStore", "ShapeError", "Tape",
    "Tensor", "analytic_gradient", "default_dtype", "finite_difference_check",
    "numeric_gradient", "primitives", "set_default_dtype",
]
