"""Differentiable grid generation and bilinear sampling.

The log-polar grid maps the target pixel (x_t, y_t) of an H x W output to
the source point

    x_s = x0 + r**(x_t / W) * cos(2*pi*y_t / H)
    y_s = y0 + r**(x_t / W) * sin(2*pi*y_t / H)

so rows sweep angle over [0, 2pi) and columns sweep radius geometrically
from 1 pixel up to the maximum radius r. Rotations about the origin become
circular row shifts of the output and dilations become column shifts.
Sources outside the input contribute zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, active_tape

__all__ = [
    "PolarGridSpec",
    "default_max_radius",
    "log_polar_grid",
    "polar_offsets",
    "identity_grid",
    "bilinear_sample",
    "polar_transform",
    "similarity_warp",
    "warp_onto_canvas",
    "cylindrical_transform",
]


def default_max_radius(in_h, in_w):
    """Half the input diagonal: the farthest a source pixel can be."""
    return 0.5 * math.hypot(in_h, in_w)


@dataclass(frozen=True)
class PolarGridSpec:
    """Origin (input-frame pixels), output extents, and maximum radius."""

    x0: float
    y0: float
    out_h: int
    out_w: int
    max_radius: float

    def __post_init__(self):
        if self.max_radius <= 0:
            raise ValueError("max_radius must be positive")
        if self.out_h < 1 or self.out_w < 1:
            raise ValueError("output extents must be positive")


def polar_offsets(out_h, out_w, max_radius, radial="log", dtype=np.float64):
    """Source offsets from the origin, shape (out_h, out_w, 2) as (dx, dy).

    radial="log" spaces columns geometrically, r**(x_t/W); radial="linear"
    spaces them as max_radius * x_t / W (plain polar).
    """
    if max_radius <= 0:
        raise ValueError("max_radius must be positive")
    ys = np.arange(out_h, dtype=np.float64)
    xs = np.arange(out_w, dtype=np.float64)
    theta = 2.0 * np.pi * ys / out_h
    if radial == "log":
        rho = max_radius ** (xs / out_w)
    elif radial == "linear":
        rho = max_radius * xs / out_w
    else:
        raise ValueError(f"unknown radial mode {radial!r}")
    off = np.empty((out_h, out_w, 2), dtype=np.float64)
    off[:, :, 0] = rho[None, :] * np.cos(theta)[:, None]
    off[:, :, 1] = rho[None, :] * np.sin(theta)[:, None]
    return off.astype(dtype, copy=False)


def log_polar_grid(spec: PolarGridSpec, radial="log"):
    """Evaluate the grid for a fixed origin; returns (out_h, out_w, 2).

    Every entry moves one-for-one with the origin: d x_s / d x0 = 1.
    """
    off = polar_offsets(spec.out_h, spec.out_w, spec.max_radius, radial=radial)
    grid = off.copy()
    grid[:, :, 0] += spec.x0
    grid[:, :, 1] += spec.y0
    return grid


def identity_grid(h, w, dtype=np.float64):
    """Grid whose source equals the target pixel."""
    g = np.empty((h, w, 2), dtype=dtype)
    g[:, :, 0] = np.arange(w, dtype=dtype)[None, :]
    g[:, :, 1] = np.arange(h, dtype=dtype)[:, None]
    return g


def _origin_grid(origin: Tensor, offsets: np.ndarray) -> Tensor:
    """Batched grid = origin[n] + offsets, differentiable w.r.t. origin."""
    n = origin.shape[0]
    grid_data = offsets[None, :, :, :] + origin.data[:, None, None, :]
    grid = Tensor(grid_data)
    tape = active_tape()
    if tape is not None and origin.requires_grad:
        grid.requires_grad = True

        def _bwd():
            if grid.grad is not None:
                origin.accumulate_grad(grid.grad.sum(axis=(1, 2)))

        tape.record(_bwd)
    return grid


def _gather_corners(data, ix, iy):
    """data (N,C,H,W) at integer coords (N,Hg,Wg); out-of-range reads 0."""
    n, c, h, w = data.shape
    valid = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    ixc = np.clip(ix, 0, w - 1)
    iyc = np.clip(iy, 0, h - 1)
    flat = (iyc * w + ixc).reshape(n, 1, -1)
    vals = np.take_along_axis(data.reshape(n, c, h * w), flat, axis=2)
    vals = vals.reshape(n, c, *ix.shape[1:])
    vals *= valid[:, None]
    return vals, valid, ixc, iyc


def bilinear_sample(x: Tensor, grid) -> Tensor:
    """Sample x (NCHW) at grid (N,Hg,Wg,2) source coords; zero outside.

    Differentiable w.r.t. both the image values and the grid coordinates,
    so origin gradients arrive by the chain rule.
    """
    grid_t = grid if isinstance(grid, Tensor) else None
    g = grid_t.data if grid_t is not None else np.asarray(grid)
    if g.ndim == 3:
        g = g[None]
    n, c, h, w = x.shape
    if g.shape[0] == 1 and n > 1:
        g = np.broadcast_to(g, (n,) + g.shape[1:])
    gx = g[..., 0]
    gy = g[..., 1]

    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    wx = (gx - x0).astype(x.dtype)
    wy = (gy - y0).astype(x.dtype)

    v00, m00, _, _ = _gather_corners(x.data, x0, y0)
    v01, m01, _, _ = _gather_corners(x.data, x0 + 1, y0)
    v10, m10, _, _ = _gather_corners(x.data, x0, y0 + 1)
    v11, m11, _, _ = _gather_corners(x.data, x0 + 1, y0 + 1)

    wxe = wx[:, None]
    wye = wy[:, None]
    out_data = (
        v00 * (1 - wxe) * (1 - wye)
        + v01 * wxe * (1 - wye)
        + v10 * (1 - wxe) * wye
        + v11 * wxe * wye
    )
    out = Tensor(out_data)

    tape = active_tape()
    track_img = x.requires_grad
    track_grid = grid_t is not None and grid_t.requires_grad
    if tape is not None and (track_img or track_grid):
        out.requires_grad = True

        def _bwd():
            go = out.grad
            if go is None:
                return
            if track_img:
                dx = np.zeros_like(x.data).reshape(n, c, h * w)
                for vals_w, ix, iy, m in (
                    ((1 - wx) * (1 - wy), x0, y0, m00),
                    (wx * (1 - wy), x0 + 1, y0, m01),
                    ((1 - wx) * wy, x0, y0 + 1, m10),
                    (wx * wy, x0 + 1, y0 + 1, m11),
                ):
                    wgt = (vals_w * m)[:, None] * go
                    ixc = np.clip(ix, 0, w - 1)
                    iyc = np.clip(iy, 0, h - 1)
                    flat = np.broadcast_to(
                        (iyc * w + ixc).reshape(n, 1, -1), (n, c, ix[0].size)
                    )
                    np.add.at(dx, (np.arange(n)[:, None, None],
                                   np.arange(c)[None, :, None],
                                   flat), wgt.reshape(n, c, -1))
                x.accumulate_grad(dx.reshape(x.shape))
            if track_grid:
                dgx = ((v01 - v00) * (1 - wye) + (v11 - v10) * wye) * go
                dgy = ((v10 - v00) * (1 - wxe) + (v11 - v01) * wxe) * go
                dg = np.stack([dgx.sum(axis=1), dgy.sum(axis=1)], axis=-1)
                grid_t.accumulate_grad(dg.astype(grid_t.dtype, copy=False))

        tape.record(_bwd)
    return out


def _clamp_origin(origin: Tensor, w, h) -> Tensor:
    from .ops import clamp  # local import to avoid a cycle

    lo = np.zeros(2)
    hi = np.array([w - 1.0, h - 1.0])
    return clamp(origin, lo, hi)


def polar_transform(x: Tensor, origin, out_h=None, out_w=None,
                    max_radius=None, radial="log") -> Tensor:
    """Log-polar resample of each batch item about its own origin.

    origin is (N, 2) as (x0, y0) in input-frame pixels (Tensor or array);
    it is clamped to the input rectangle before grid generation (the clamp
    is a flat region for gradients). Output defaults to in_h x in_h and the
    max radius to half the input diagonal.
    """
    n, c, h, w = x.shape
    out_h = out_h or h
    out_w = out_w or out_h
    if max_radius is None:
        max_radius = default_max_radius(h, w)
    if not isinstance(origin, Tensor):
        origin = Tensor(np.broadcast_to(np.asarray(origin, dtype=np.float64),
                                        (n, 2)).copy())
    origin = _clamp_origin(origin, w, h)
    offsets = polar_offsets(out_h, out_w, max_radius, radial=radial,
                            dtype=origin.dtype)
    grid = _origin_grid(origin, offsets)
    return bilinear_sample(x, grid)


def _rot90_indices(angle):
    """Quarter-turn count if angle is an exact multiple of pi/2, else None."""
    k = angle / (0.5 * math.pi)
    kr = round(k)
    if abs(k - kr) < 1e-12:
        return kr % 4
    return None


def _permute_quarter_turn(data, k):
    # out[y, x] = in at the inverse quarter-turn; k=1 is +90deg content turn
    if k == 0:
        return data.copy()
    return np.rot90(data, k=-k, axes=(-2, -1)).copy()


def similarity_warp(x: Tensor, angle, scale=1.0, shift=(0.0, 0.0)) -> Tensor:
    """Rotate/scale/translate about the image center by inverse mapping.

    angle (radians), scale, and shift may be scalars/pairs or per-item
    arrays. Exact multiples of 90 degrees with unit scale, no shift, and a
    square frame are applied by index permutation, giving an exact oracle
    for quarter turns; everything else resamples bilinearly, zero outside.
    """
    n, c, h, w = x.shape
    angles = np.broadcast_to(np.asarray(angle, dtype=np.float64), (n,))
    scales = np.broadcast_to(np.asarray(scale, dtype=np.float64), (n,))
    shifts = np.broadcast_to(np.asarray(shift, dtype=np.float64), (n, 2))
    if np.any(scales <= 0):
        raise ValueError("scale must be positive")

    ks = [_rot90_indices(a) for a in angles]
    pure_turns = (h == w and all(k is not None for k in ks)
                  and np.all(scales == 1.0) and not np.any(shifts))
    if pure_turns:
        out_data = np.stack([_permute_quarter_turn(x.data[i], ks[i])
                             for i in range(n)])
        out = Tensor(out_data)
        tape = active_tape()
        if tape is not None and x.requires_grad:
            out.requires_grad = True

            def _bwd():
                if out.grad is not None:
                    x.accumulate_grad(np.stack(
                        [_permute_quarter_turn(out.grad[i], -ks[i] % 4)
                         for i in range(n)]))

            tape.record(_bwd)
        return out

    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    tx = np.arange(w, dtype=np.float64)[None, :]
    ty = np.arange(h, dtype=np.float64)[:, None]
    px = (tx - cx - shifts[:, 0, None, None])
    py = (ty - cy - shifts[:, 1, None, None])
    ca = np.cos(-angles)[:, None, None]
    sa = np.sin(-angles)[:, None, None]
    inv_s = 1.0 / scales[:, None, None]
    sx = (ca * px - sa * py) * inv_s + cx
    sy = (sa * px + ca * py) * inv_s + cy
    grid = np.stack([sx, sy], axis=-1)
    return bilinear_sample(x, grid)


def warp_onto_canvas(digit: np.ndarray, canvas_hw, angle, scale, center_xy):
    """Place a rotated/scaled digit frame onto a larger canvas in one resample.

    The digit's frame center lands at center_xy on the canvas, avoiding the
    double interpolation of warp-then-paste.
    """
    dh, dw = digit.shape
    ch, cw = canvas_hw
    dcx = (dw - 1) / 2.0
    dcy = (dh - 1) / 2.0
    tx = np.arange(cw, dtype=np.float64)[None, :]
    ty = np.arange(ch, dtype=np.float64)[:, None]
    px = tx - center_xy[0]
    py = ty - center_xy[1]
    ca = math.cos(-angle)
    sa = math.sin(-angle)
    sx = (ca * px - sa * py) / scale + dcx
    sy = (sa * px + ca * py) / scale + dcy
    grid = np.stack([sx, sy], axis=-1)
    out = bilinear_sample(Tensor(digit[None, None]), grid[None])
    return out.data[0, 0]


def cylindrical_transform(volume: Tensor, origin, out_h=None, out_w=None,
                          max_radius=None, radial="linear") -> Tensor:
    """Channel-wise polar transform of a voxel grid about a vertical axis.

    volume is (N, C, D, H, W); every depth slice is resampled with the same
    per-volume origin, so rotations about the axis become row shifts in all
    slices. Plain (linear-radius) polar by default; radial="log" gives the
    scale-equivariant variant.
    """
    n, c, d, h, w = volume.shape
    flat = Tensor(volume.data.reshape(n, c * d, h, w),
                  requires_grad=volume.requires_grad)
    tape = active_tape()
    if tape is not None and volume.requires_grad:
        # recorded before the polar ops, so it replays after them and sees
        # the populated flat.grad
        def _bwd_flat():
            if flat.grad is not None:
                volume.accumulate_grad(flat.grad.reshape(volume.shape))

        tape.record(_bwd_flat)
    out = polar_transform(flat, origin, out_h=out_h, out_w=out_w,
                          max_radius=max_radius, radial=radial)
    oh, ow = out.shape[2], out.shape[3]
    res = Tensor(out.data.reshape(n, c, d, oh, ow))
    if tape is not None and out.requires_grad:
        res.requires_grad = True

        def _bwd_reshape():
            if res.grad is not None:
                out.accumulate_grad(res.grad.reshape(out.shape))

        tape.record(_bwd_reshape)
    return res
