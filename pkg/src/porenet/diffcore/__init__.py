"""Differentiation engine: Taylor jets for space, a tape for parameters."""

from .dual import Dual2, directional_derivatives
from .functions import abs_smooth, cos, exp, log, maximum, norm, sigmoid, silu, sin, sqrt, tanh, where
from .gradcheck import central_difference, fd_check, relative_error
from .jet import Jet, Mlp, activate, concat, constant, laplacian_and_jacobian, linear, pooled_linear, seed
from .tape import GradientVector, Primitive, Tape, Var, apply, parameter_gradient, value_of

__all__ = [
    "Dual2", "directional_derivatives", "abs_smooth", "cos", "exp", "log", "maximum", "norm",
    "sigmoid", "silu", "sin", "sqrt", "tanh", "where", "central_difference", "fd_check",
    "relative_error", "Jet", "Mlp", "activate", "concat", "constant", "laplacian_and_jacobian",
    "linear", "pooled_linear", "seed", "GradientVector", "Primitive", "Tape", "Var", "apply",
    "parameter_gradient", "value_of",
]
