"""A minimal reverse-mode tape over numpy arrays.

Each op in :mod:`lesionseg.engine.ops` returns a :class:`Tensor` whose
``_bwd`` closure maps the output gradient onto the parents. ``backward``
walks the tape in reverse topological order. Gradients accumulate on
``Tensor.grad``; parameter tensors are the leaves the optimizer reads.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """An array plus its position in the autodiff tape."""

    __slots__ = ("data", "grad", "_parents", "_bwd")

    def __init__(self, data, parents=(), bwd=None):
        self.data = data
        self.grad = None
        self._parents = parents
        self._bwd = bwd

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def backward(out: Tensor, seed_grad: np.ndarray) -> None:
    """Backpropagate ``seed_grad`` (d loss / d out) through the tape."""
    if seed_grad.shape != out.data.shape:
        raise ValueError(
            f"seed gradient shape {seed_grad.shape} != output shape {out.data.shape}"
        )
    order = []
    seen = set()
    stack = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    out.grad = seed_grad
    for node in reversed(order):
        if node._bwd is None or node.grad is None:
            continue
        grads = node._bwd(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None
