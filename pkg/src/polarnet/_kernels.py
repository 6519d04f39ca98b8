"""Data-movement kernels behind conv2d.

im2col produces channel-major columns, (C*kh*kw, N*oh*ow), so a single
large GEMM covers the whole batch; col2im is its exact adjoint. Padding is
same-size (floor(k/2) per side); wrap mode reads rows modulo H. Strided
block copies through numpy beat jitted per-element loops on the shapes this
network runs, so it is plain numpy throughout.
"""

from __future__ import annotations

import numpy as np

__all__ = ["gather_cols", "scatter_cols"]


def gather_cols(x, kh, kw, stride, oh, ow, wrap):
    """im2col with same-size padding: (C*kh*kw, N*oh*ow), channel-major."""
    n, c, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    xv = x.transpose(1, 0, 2, 3)
    if ph or pw:
        xt = np.zeros((c, n, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
        xt[:, :, ph:ph + h, pw:pw + w] = xv
        if wrap and ph:
            xt[:, :, :ph, pw:pw + w] = xv[:, :, h - ph:]
            xt[:, :, ph + h:, pw:pw + w] = xv[:, :, :ph]
    else:
        xt = np.ascontiguousarray(xv)
    cols = np.empty((c, kh, kw, n, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i:i + stride * oh:stride,
                               j:j + stride * ow:stride]
    return cols.reshape(c * kh * kw, n * oh * ow)


def scatter_cols(dcols, x_shape, kh, kw, stride, oh, ow, wrap):
    """Adjoint of gather_cols: accumulate columns back onto the input."""
    n, c, h, w = x_shape
    ph, pw = kh // 2, kw // 2
    hp, wp = h + 2 * ph, w + 2 * pw
    dxp_t = np.zeros((c, n, hp, wp), dtype=dcols.dtype)
    dc = dcols.reshape(c, kh, kw, n, oh, ow)
    for i in range(kh):
        for j in range(kw):
            dxp_t[:, :, i:i + stride * oh:stride,
                  j:j + stride * ow:stride] += dc[:, i, j]
    if pw:
        dxp_t = dxp_t[:, :, :, pw:-pw]
    if ph:
        core = dxp_t[:, :, ph:ph + h].copy()
        if wrap:
            core[:, :, h - ph:h] += dxp_t[:, :, :ph]
            core[:, :, :ph] += dxp_t[:, :, ph + h:]
        dxp_t = core
    return np.ascontiguousarray(dxp_t.transpose(1, 0, 2, 3))
