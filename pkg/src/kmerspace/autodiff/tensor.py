"""Reverse-mode tape: numpy-backed tensors in a define-by-run graph."""

import numpy as np


class Tensor:
    """An n-d array plus the bookkeeping needed for backpropagation.

    ``grad`` accumulates across repeated backward() calls until
    :func:`zero_grad` is used; graphs are rebuilt on every forward pass.
    """

    __slots__ = ("data", "grad", "requires_grad", "_links", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._links = ()          # tuple of (parent Tensor, vjp callable)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def param(data, name=None):
    """Wrap an array as a trainable leaf."""
    return Tensor(np.asarray(data), requires_grad=True, name=name)


def lift(x):
    """Coerce arrays/scalars to constant Tensors; pass Tensors through."""
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def make_node(data, links):
    """Create an op output wired to the parents that need gradients."""
    live = tuple((p, fn) for p, fn in links if p.requires_grad)
    out = Tensor(data, requires_grad=bool(live))
    out._links = live
    return out


def _toposort(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._links:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss):
    """Accumulate dLoss/dX into ``.grad`` of every reachable tensor.

    loss must be scalar. Leaf grads add up across calls (callers zero them
    between steps).
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    order = _toposort(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        for parent, vjp in node._links:
            pg = vjp(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return None


def zero_grad(params):
    """Clear grads on an iterable or dict of tensors."""
    if isinstance(params, dict):
        params = params.values()
    for p in params:
        p.grad = None
