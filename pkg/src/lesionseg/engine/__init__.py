from .tensor import Tensor, backward, zero_grads
from . import ops
from .optim import SGD

__all__ = ["Tensor", "backward", "zero_grads", "ops", "SGD"]
