from .tape import Tensor, no_grad, parameter

__all__ = ["Tensor", "no_grad", "parameter"]
