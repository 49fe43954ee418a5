"""Stochastic gradient descent with classical momentum."""

from __future__ import annotations

import numpy as np


class SGD:
    """v = momentum * v - lr * grad;  w += v.

    ``params`` maps parameter names to the live arrays the layers hold;
    updates happen in place so the model sees them immediately.
    """

    def __init__(self, params: dict, lr: float, momentum: float = 0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> None:
        for name, arr in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v -= self.lr * g.astype(arr.dtype)
            arr += v

    def state_dict(self) -> dict:
        return {name: v.copy() for name, v in self.velocity.items()}

    def load_state_dict(self, state: dict) -> None:
        for name, v in state.items():
            if name not in self.velocity:
                raise KeyError(f"unknown optimizer state entry {name!r}")
            self.velocity[name] = v.astype(self.params[name].dtype)
