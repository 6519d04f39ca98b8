"""Convolutional network primitives with tape-recorded backward rules.

All image tensors are NCHW. Convolution is cross-correlation (kernels are
learned, so the flip is immaterial); padding keeps the same spatial size up
to striding, with output extent ceil(H/stride). The vertical axis may use
wrap-around (circular) padding so that feature maps periodic in the row
coordinate stay periodic through the stack.
"""

from __future__ import annotations

import enum

import numpy as np

from ._kernels import gather_cols, scatter_cols
from .autodiff import Tensor, active_tape

__all__ = [
    "PaddingMode",
    "add",
    "bias_add",
    "conv2d",
    "relu",
    "batch_norm",
    "global_average_pool",
    "softmax_cross_entropy",
    "add_constant",
    "clamp",
    "reduce_sum",
    "weighted_sum",
]


class PaddingMode(enum.Enum):
    """Vertical padding behaviour; the horizontal axis always zero-pads."""

    ZERO = "zero"
    WRAP = "wrap"


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: PaddingMode = PaddingMode.ZERO) -> Tensor:
    """Same-size strided cross-correlation, kernel OIKhKw.

    Wrap mode reads rows modulo H (circular indexing before subsampling),
    so circular row shifts by multiples of the stride commute with the op.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ValueError("conv2d expects NCHW input and OIKhKw kernel")
    n, c, h, w = x.shape
    o, i, kh, kw = kernel.shape
    if i != c:
        raise ValueError(f"kernel expects {i} input channels, input has {c}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel spatial size must be odd")
    if not isinstance(stride, int) or stride < 1:
        raise ValueError(f"stride must be a positive int, got {stride!r}")
    ph, pw = kh // 2, kw // 2
    if padding is PaddingMode.WRAP and ph > h:
        raise ValueError("wrap padding wider than the input height")

    oh = -(-h // stride)
    ow = -(-w // stride)
    wrap = padding is PaddingMode.WRAP
    cols = gather_cols(x.data, kh, kw, stride, oh, ow, wrap)
    w2d = kernel.data.reshape(o, c * kh * kw)
    out_data = np.ascontiguousarray(
        np.matmul(w2d, cols).reshape(o, n, oh, ow).transpose(1, 0, 2, 3))

    out = Tensor(out_data)
    tape = active_tape()
    needs = x.requires_grad or kernel.requires_grad
    if tape is not None and needs:
        out.requires_grad = True

        def _bwd():
            g = out.grad
            if g is None:
                return
            g2d = np.ascontiguousarray(
                g.transpose(1, 0, 2, 3)).reshape(o, n * oh * ow)
            if kernel.requires_grad:
                dw = np.matmul(g2d, cols.T)
                kernel.accumulate_grad(dw.reshape(kernel.shape))
            if x.requires_grad:
                dcols = np.matmul(w2d.T, g2d)
                x.accumulate_grad(scatter_cols(dcols, x.shape, kh, kw,
                                               stride, oh, ow, wrap))

        tape.record(_bwd)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))
    tape = active_tape()
    if tape is not None and x.requires_grad:
        out.requires_grad = True
        mask = x.data > 0

        def _bwd():
            if out.grad is not None:
                x.accumulate_grad(out.grad * mask)

        tape.record(_bwd)
    return out


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over (N, H, W).

    Train mode normalizes by biased batch statistics and updates the running
    buffers in place; eval mode uses the running buffers. Differentiable
    w.r.t. input, gamma, and beta in both modes.
    """
    n, c, h, w = x.shape
    if n == 0:
        raise ValueError("batch_norm on an empty batch")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError("gamma/beta must be per-channel vectors")
    axes = (0, 2, 3)
    m = n * h * w
    if train:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean.astype(x.dtype, copy=False)
        var = running_var.astype(x.dtype, copy=False)
    inv_std = 1.0 / np.sqrt(var + eps)
    # out = x * scale + offset, folding the normalization into one affine
    scale = (gamma.data * inv_std).astype(x.dtype)
    offset = (beta.data - mean * scale).astype(x.dtype)
    out_data = x.data * scale[None, :, None, None]
    out_data += offset[None, :, None, None]
    out = Tensor(out_data)

    tape = active_tape()
    needs = x.requires_grad or gamma.requires_grad or beta.requires_grad
    if tape is not None and needs:
        out.requires_grad = True

        def _bwd():
            g = out.grad
            if g is None:
                return
            xhat = x.data - mean[None, :, None, None]
            xhat *= inv_std[None, :, None, None]
            if beta.requires_grad:
                beta.accumulate_grad(g.sum(axis=axes))
            if gamma.requires_grad:
                gamma.accumulate_grad((g * xhat).sum(axis=axes))
            if x.requires_grad:
                gs = gamma.data * inv_std
                if train:
                    # d/dx of the batch statistics included
                    s1 = g.sum(axis=axes)
                    s2 = (g * xhat).sum(axis=axes)
                    dx = xhat
                    dx *= -s2[None, :, None, None] / m
                    dx -= s1[None, :, None, None] / m
                    dx += g
                    dx *= gs[None, :, None, None]
                else:
                    dx = g * gs[None, :, None, None]
                x.accumulate_grad(dx)

        tape.record(_bwd)
    return out


def global_average_pool(x: Tensor) -> Tensor:
    """Spatial mean per channel, NCHW -> NC."""
    n, c, h, w = x.shape
    out = Tensor(x.data.mean(axis=(2, 3)))
    tape = active_tape()
    if tape is not None and x.requires_grad:
        out.requires_grad = True

        def _bwd():
            if out.grad is not None:
                x.accumulate_grad(
                    np.broadcast_to(out.grad[:, :, None, None] / (h * w), x.shape)
                )

        tape.record(_bwd)
    return out


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax of the labelled class; max-stabilized."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError("labels must be a vector matching the batch")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    nll = -(z[np.arange(n), labels] - np.log(ez.sum(axis=1)))
    out = Tensor(np.asarray(nll.mean(), dtype=logits.dtype))

    tape = active_tape()
    if tape is not None and logits.requires_grad:
        out.requires_grad = True

        def _bwd():
            if out.grad is None:
                return
            d = probs.copy()
            d[np.arange(n), labels] -= 1.0
            logits.accumulate_grad(d * (out.grad / n))

        tape.record(_bwd)
    return out


def add_constant(x: Tensor, const) -> Tensor:
    """x + const where const carries no gradient (e.g. origin jitter)."""
    out = Tensor(x.data + np.asarray(const, dtype=x.dtype))
    tape = active_tape()
    if tape is not None and x.requires_grad:
        out.requires_grad = True

        def _bwd():
            if out.grad is not None:
                x.accumulate_grad(out.grad)

        tape.record(_bwd)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)
    tape = active_tape()
    if tape is not None and (a.requires_grad or b.requires_grad):
        out.requires_grad = True

        def _bwd():
            if out.grad is None:
                return
            if a.requires_grad:
                a.accumulate_grad(out.grad)
            if b.requires_grad:
                b.accumulate_grad(out.grad)

        tape.record(_bwd)
    return out


def bias_add(x: Tensor, bias: Tensor) -> Tensor:
    """Add a per-channel bias along axis 1 of an NC... tensor."""
    c = x.shape[1]
    if bias.shape != (c,):
        raise ValueError("bias must match the channel extent")
    shape = (1, c) + (1,) * (x.data.ndim - 2)
    out = Tensor(x.data + bias.data.reshape(shape))
    tape = active_tape()
    if tape is not None and (x.requires_grad or bias.requires_grad):
        out.requires_grad = True
        reduce_axes = (0,) + tuple(range(2, x.data.ndim))

        def _bwd():
            if out.grad is None:
                return
            if x.requires_grad:
                x.accumulate_grad(out.grad)
            if bias.requires_grad:
                bias.accumulate_grad(out.grad.sum(axis=reduce_axes))

        tape.record(_bwd)
    return out


def reduce_sum(x: Tensor) -> Tensor:
    """Sum of all elements as a scalar."""
    out = Tensor(np.asarray(x.data.sum(), dtype=x.dtype))
    tape = active_tape()
    if tape is not None and x.requires_grad:
        out.requires_grad = True

        def _bwd():
            if out.grad is not None:
                x.accumulate_grad(np.broadcast_to(out.grad, x.shape))

        tape.record(_bwd)
    return out


def weighted_sum(x: Tensor, weights) -> Tensor:
    """Fixed-weight projection to a scalar; the usual gradcheck scalarizer."""
    wgt = np.asarray(weights, dtype=x.dtype)
    out = Tensor(np.asarray((x.data * wgt).sum(), dtype=x.dtype))
    tape = active_tape()
    if tape is not None and x.requires_grad:
        out.requires_grad = True

        def _bwd():
            if out.grad is not None:
                x.accumulate_grad(out.grad * wgt)

        tape.record(_bwd)
    return out


def clamp(x: Tensor, lo, hi) -> Tensor:
    """Elementwise clip; the clipped region is flat (zero gradient)."""
    out = Tensor(np.clip(x.data, lo, hi))
    tape = active_tape()
    if tape is not None and x.requires_grad:
        out.requires_grad = True
        inside = (x.data >= lo) & (x.data <= hi)

        def _bwd():
            if out.grad is not None:
                x.accumulate_grad(out.grad * inside)

        tape.record(_bwd)
    return out
