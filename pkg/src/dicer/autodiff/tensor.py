"""Dense tensors and the define-by-run tape used for reverse-mode gradients.

A :class:`Tape` is activated as a context manager. While it is active every
primitive applied to a tensor that requires gradients appends one node to the
tape; :meth:`Tape.backward` then walks the nodes in exact reverse order.
Outside an active tape primitives run in inference mode and record nothing.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..exceptions import ShapeError

_ACTIVE: list["Tape"] = []


class Tensor:
    """A 64-bit float array, optionally tracked for gradients."""

    __slots__ = ("data", "grad", "requires_grad", "name", "is_leaf")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.is_leaf = True

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # Sugar; the real work lives in ops.
    def __add__(self, other):
        from . import ops
        return ops.add(self, as_tensor(other))

    def __mul__(self, other):
        from . import ops
        if np.isscalar(other):
            return ops.scale(self, float(other))
        return ops.mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, as_tensor(other))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    op: Any
    inputs: tuple
    output: Tensor
    ctx: dict = field(default_factory=dict)


class Tape:
    """Ordered record of the primitives executed in one forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def record(self, op, inputs, output, ctx):
        self.nodes.append(Node(op, tuple(inputs), output, ctx))

    def backward(self, loss: Tensor) -> dict:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every tracked leaf.

        Returns a mapping from leaf tensor to its gradient array. Gradients
        reaching untracked leaves are dropped.
        """
        if loss.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.op.backward(node.ctx, g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if inp.is_leaf:
                    leaves[key] = inp
        out = {}
        for key, leaf in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            leaf.grad = g if leaf.grad is None else leaf.grad + g
            out[leaf] = g
        return out


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def no_grad_mode() -> bool:
    return not _ACTIVE
