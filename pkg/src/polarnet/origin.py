"""Differentiable origin extraction from a single-channel heatmap.

An argmax over the heatmap would have zero gradient almost everywhere, so
the origin is taken as the centroid of the softmax-normalized map: the
centroid's gradient w.r.t. each heatmap cell is that cell's coordinate,
nonzero wherever the cell sits away from the current mean. Coordinates use
the pixel-center convention (pixel j is at coordinate j, 0-based).
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, active_tape

__all__ = ["spatial_softmax", "centroid", "to_input_frame"]


def spatial_softmax(raw: Tensor) -> Tensor:
    """Normalize an (N, 1, H, W) map to a strictly positive unit-mass map."""
    n, c, h, w = raw.shape
    flat = raw.data.reshape(n, -1)
    z = flat - flat.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    out = Tensor(probs.reshape(raw.shape))

    tape = active_tape()
    if tape is not None and raw.requires_grad:
        out.requires_grad = True

        def _bwd():
            if out.grad is None:
                return
            g = out.grad.reshape(n, -1)
            dot = (g * probs).sum(axis=1, keepdims=True)
            raw.accumulate_grad((probs * (g - dot)).reshape(raw.shape))

        tape.record(_bwd)
    return out


def centroid(heat: Tensor) -> Tensor:
    """Mass-weighted mean coordinate of a normalized map, as (N, 2) = (x, y)."""
    n, c, h, w = heat.shape
    xs = np.arange(w, dtype=heat.dtype)
    ys = np.arange(h, dtype=heat.dtype)
    hm = heat.data.reshape(n, h, w)
    cx = (hm.sum(axis=1) * xs).sum(axis=1)
    cy = (hm.sum(axis=2) * ys).sum(axis=1)
    out = Tensor(np.stack([cx, cy], axis=1))

    tape = active_tape()
    if tape is not None and heat.requires_grad:
        out.requires_grad = True

        def _bwd():
            if out.grad is None:
                return
            gx = out.grad[:, 0]
            gy = out.grad[:, 1]
            d = (gx[:, None, None] * xs[None, None, :]
                 + gy[:, None, None] * ys[None, :, None])
            heat.accumulate_grad(d.reshape(heat.shape))

        tape.record(_bwd)
    return out


def to_input_frame(origin: Tensor, stride_product: int) -> Tensor:
    """Map heatmap-frame coordinates to input-frame pixel centers.

    A heatmap pixel covers a stride_product-wide patch of input; its center
    sits at j * stride_product + (stride_product - 1) / 2.
    """
    if stride_product < 1:
        raise ValueError("stride_product must be >= 1")
    sp = float(stride_product)
    out = Tensor(origin.data * sp + (sp - 1.0) / 2.0)

    tape = active_tape()
    if tape is not None and origin.requires_grad:
        out.requires_grad = True

        def _bwd():
            if out.grad is not None:
                origin.accumulate_grad(out.grad * sp)

        tape.record(_bwd)
    return out
