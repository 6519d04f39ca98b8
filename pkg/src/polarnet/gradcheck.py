"""Finite-difference verification of tape gradients.

Compares the recorded backward pass against central differences at 64-bit
precision. Probe points must be non-degenerate: away from relu kinks and
from integer sampling coordinates, where the true derivative jumps.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tape, backward

__all__ = ["gradcheck"]


def gradcheck(fn, inputs, step=1e-5):
    """Max relative error between tape and finite-difference gradients.

    ``fn(*inputs)`` must return a scalar Tensor. Error per element is
    |ad - fd| / max(1, |ad|, |fd|), reported as the max over all elements
    of every grad-requiring input.
    """
    for t in inputs:
        if t.requires_grad and t.dtype != np.float64:
            raise ValueError("gradcheck requires float64 inputs")
        t.zero_grad()
    with Tape() as tape:
        out = fn(*inputs)
    backward(out, tape)

    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        flat = t.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(fn(*inputs).data)
            flat[i] = orig - step
            fm = float(fn(*inputs).data)
            flat[i] = orig
            fd = (fp - fm) / (2.0 * step)
            err = abs(aflat[i] - fd) / max(1.0, abs(aflat[i]), abs(fd))
            if err > worst:
                worst = err
    return worst
