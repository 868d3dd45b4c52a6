"""Minimal dense-array engine with reverse-mode differentiation."""

from .graph import Graph, backward_grad, forward_eval, grad_check, topological_order
from .tensor import EPS_DIV, Tensor, as_tensor, constant, parameter

__all__ = [
    "EPS_DIV",
    "Graph",
    "Tensor",
    "as_tensor",
    "backward_grad",
    "constant",
    "forward_eval",
    "grad_check",
    "parameter",
    "topological_order",
]
