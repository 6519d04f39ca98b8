"""Reverse-mode automatic differentiation over dense numpy tensors.

A Tape records each differentiable operation while active (eager execution
order, which is already topological); ``backward`` replays the records in
reverse and accumulates into per-tensor ``grad`` buffers. Tensors are plain
value holders: float32 for training, float64 for gradient verification.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Tensor", "Tape", "backward", "active_tape", "as_tensor"]

_TAPE_STACK: list["Tape"] = []


class Tensor:
    """Dense N-dimensional array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g):
        # grad buffer mirrors data shape; lazily allocated on first use
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else None

    def __repr__(self):
        head = f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}"
        if self.name:
            head += f", name={self.name!r}"
        return head + (", grad" if self.requires_grad else "") + ")"


class Tape:
    """Ordered record of executed operations, one backward rule each.

    Use as a context manager around a forward pass; every op that sees an
    active tape and a grad-requiring input appends its backward closure.
    """

    def __init__(self):
        self.nodes = []

    def record(self, backward_fn):
        self.nodes.append(backward_fn)

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"
        return False

    def __len__(self):
        return len(self.nodes)


def active_tape():
    """The innermost open Tape, or None outside any recording context."""
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def backward(loss, tape):
    """Populate grads of every recorded input reachable from a scalar loss.

    Replays the tape in reverse; each rule reads its output's grad and
    accumulates into its inputs. Deterministic given an identical forward
    execution.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for fn in reversed(tape.nodes):
        fn()
