"""Architecture assembly: origin predictor, polar resampling, classifier.

The building block everywhere is a 3x3 convolution followed by batch
normalization and a relu, subsampling by strided convolution. Variants:

  PTN-S / PTN-B   origin predictor -> polar transform -> classifier
  CCNN-S / CCNN-B plain classifier on the Cartesian input
  PCNN-S / PCNN-B the same classifier fed precomputed center-origin polar
                  images

The "S" classifier is seven blocks of 20 filters with one stride-2 round;
"B" uses 16,16,32,32,32,64,64,64 with stride 2 wherever the filter count
rises, prepending one extra stride-2 block of 16 for 42-px inputs and two
for 96-px inputs. The origin predictor is three blocks of 20 filters with
stride 2 on the first (first two at 96 px) topped by a 1x1 conv producing
the heatmap. Classifiers that see polar maps use vertical wrap padding in
every block; Cartesian stacks use zero padding.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tensor
from .ops import (
    PaddingMode,
    batch_norm,
    bias_add,
    conv2d,
    global_average_pool,
    relu,
)
from .origin import centroid, spatial_softmax, to_input_frame
from .sampler import default_max_radius, polar_transform, similarity_warp
from .ops import add_constant

__all__ = [
    "BlockSpec",
    "NetworkConfig",
    "ForwardTrace",
    "Model",
    "VARIANTS",
    "build",
    "forward_ptn",
    "forward_baseline",
    "forward",
    "augment_rotation",
    "predict_tta",
    "center_polar",
]

VARIANTS = ("PTN-S", "PTN-B", "CCNN-S", "CCNN-B", "PCNN-S", "PCNN-B")


@dataclass(frozen=True)
class BlockSpec:
    """One conv->bn->relu block; kernels are fixed 3x3."""

    filters: int
    stride: int = 1
    padding: PaddingMode = PaddingMode.ZERO


@dataclass
class NetworkConfig:
    variant: str = "PTN-S"
    input_size: int = 28
    n_classes: int = 10
    polar_h: int = 0            # 0: input height
    polar_w: int = 0            # 0: same as polar_h
    max_radius: float = 0.0     # 0: half the input diagonal
    wrap_padding: bool = True
    augment_rotation: bool = False
    origin_shift_frac: float = 0.05
    test_time_rotations: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; "
                             f"expected one of {', '.join(VARIANTS)}")

    @property
    def is_ptn(self):
        return self.variant.startswith("PTN")

    @property
    def is_polar_classifier(self):
        return self.variant.startswith(("PTN", "PCNN"))

    def resolved_polar_shape(self):
        h = self.polar_h or self.input_size
        w = self.polar_w or h
        return h, w

    def resolved_max_radius(self):
        return self.max_radius or default_max_radius(self.input_size,
                                                     self.input_size)


def classifier_blocks(config: NetworkConfig):
    pad = (PaddingMode.WRAP
           if config.is_polar_classifier and config.wrap_padding
           else PaddingMode.ZERO)
    small = config.variant.endswith("-S")
    if small:
        specs = [BlockSpec(20, 2 if i == 1 else 1, pad) for i in range(7)]
        return specs
    filters = [16, 16, 32, 32, 32, 64, 64, 64]
    if config.input_size >= 96:
        filters = [16, 16] + filters
    elif config.input_size >= 42:
        filters = [16] + filters
    specs = []
    prev = None
    for i, f in enumerate(filters):
        extra = i < len(filters) - 8
        stride = 2 if extra or (prev is not None and f > prev) else 1
        specs.append(BlockSpec(f, stride, pad))
        prev = f
    return specs


def predictor_blocks(config: NetworkConfig):
    n_strided = 2 if config.input_size >= 96 else 1
    return [BlockSpec(20, 2 if i < n_strided else 1, PaddingMode.ZERO)
            for i in range(3)]


@dataclass
class ForwardTrace:
    logits: Tensor
    heatmap: Tensor | None = None
    origin_heatmap: Tensor | None = None
    origin_input: Tensor | None = None
    polar: Tensor | None = None
    feature_maps: list = field(default_factory=list)


class Model:
    """Named parameters, batch-norm buffers, and the layer plan."""

    def __init__(self, config: NetworkConfig, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.cls_blocks = classifier_blocks(config)
        self.pred_blocks = predictor_blocks(config) if config.is_ptn else []
        self.forward_count = 0
        self.bn_momentum = 0.1

    @property
    def heatmap_stride(self):
        s = 1
        for b in self.pred_blocks:
            s *= b.stride
        return s

    @property
    def classifier_stride(self):
        s = 1
        for b in self.cls_blocks:
            s *= b.stride
        return s

    def param_count(self):
        return sum(t.size for t in self.params.values())

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def state_arrays(self):
        out = {k: t.data for k, t in self.params.items()}
        out.update(self.buffers)
        return out

    def load_state_arrays(self, arrays):
        for name, t in self.params.items():
            if name not in arrays:
                raise ValueError(f"checkpoint missing parameter {name!r}")
            if tuple(arrays[name].shape) != tuple(t.shape):
                raise ValueError(
                    f"shape mismatch for {name!r}: checkpoint "
                    f"{arrays[name].shape} vs model {tuple(t.shape)}")
            t.data = arrays[name].astype(self.dtype)
        for name in self.buffers:
            if name not in arrays:
                raise ValueError(f"checkpoint missing buffer {name!r}")
            self.buffers[name] = arrays[name].astype(self.dtype)


def _he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def build(config: NetworkConfig, seed: int, dtype=np.float32) -> Model:
    """Materialize parameters; bit-identical for a fixed seed."""
    model = Model(config, dtype=dtype)
    rng = np.random.default_rng(seed)

    def add_conv(name, cin, cout, k, with_bn=True):
        fan_in = cin * k * k
        model.params[f"{name}.w"] = Tensor(
            _he_uniform(rng, (cout, cin, k, k), fan_in, dtype),
            requires_grad=True, name=f"{name}.w")
        if with_bn:
            model.params[f"{name}.gamma"] = Tensor(
                np.ones(cout, dtype=dtype), requires_grad=True,
                name=f"{name}.gamma")
            model.params[f"{name}.beta"] = Tensor(
                np.zeros(cout, dtype=dtype), requires_grad=True,
                name=f"{name}.beta")
            model.buffers[f"{name}.rmean"] = np.zeros(cout, dtype=dtype)
            model.buffers[f"{name}.rvar"] = np.ones(cout, dtype=dtype)

    if config.is_ptn:
        cin = 1
        for i, blk in enumerate(model.pred_blocks):
            add_conv(f"pred{i}", cin, blk.filters, 3)
            cin = blk.filters
        # heatmap conv carries no bias: spatial softmax ignores offsets
        add_conv("heat", cin, 1, 1, with_bn=False)

    cin = 1
    for i, blk in enumerate(model.cls_blocks):
        add_conv(f"cls{i}", cin, blk.filters, 3)
        cin = blk.filters
    add_conv("head", cin, config.n_classes, 1, with_bn=False)
    model.params["head.b"] = Tensor(np.zeros(config.n_classes, dtype=dtype),
                                    requires_grad=True, name="head.b")
    return model


def _run_block(model, name, blk: BlockSpec, x, train):
    h = conv2d(x, model.params[f"{name}.w"], stride=blk.stride,
               padding=blk.padding)
    h = batch_norm(h, model.params[f"{name}.gamma"],
                   model.params[f"{name}.beta"],
                   model.buffers[f"{name}.rmean"],
                   model.buffers[f"{name}.rvar"], train=train,
                   momentum=model.bn_momentum)
    return relu(h)


def _run_classifier(model, x, train, retain_maps=False):
    maps = []
    for i, blk in enumerate(model.cls_blocks):
        x = _run_block(model, f"cls{i}", blk, x, train)
        if retain_maps:
            maps.append(x)
    logits = bias_add(global_average_pool(conv2d(x, model.params["head.w"])),
                      model.params["head.b"])
    return logits, maps, x


def predict_origin(model, batch, train):
    """Heatmap softmax centroid in both frames: (heatmap, o_hm, o_input)."""
    h = batch
    for i, blk in enumerate(model.pred_blocks):
        h = _run_block(model, f"pred{i}", blk, h, train)
    raw = conv2d(h, model.params["heat.w"])
    heat = spatial_softmax(raw)
    o_hm = centroid(heat)
    o_in = to_input_frame(o_hm, model.heatmap_stride)
    return heat, o_hm, o_in


def forward_ptn(model, batch, train=False, rng=None, origin_override=None,
                retain_maps=False) -> ForwardTrace:
    """Full path: predictor -> centroid -> polar transform -> classifier.

    Train mode jitters the predicted origin by a uniform per-item shift of
    up to origin_shift_frac of the input width per axis (needs rng). An
    explicit origin_override (array (N,2) or (2,)) bypasses the predictor
    gradient path, e.g. to force the image center.
    """
    cfg = model.config
    if not cfg.is_ptn:
        raise ValueError(f"forward_ptn on variant {cfg.variant}")
    model.forward_count += 1
    n = batch.shape[0]

    heat, o_hm, o_in = predict_origin(model, batch, train)
    if origin_override is not None:
        o_in = Tensor(np.broadcast_to(
            np.asarray(origin_override, dtype=batch.dtype), (n, 2)).copy())
    if train and cfg.origin_shift_frac > 0:
        if rng is None:
            raise ValueError("train-mode origin augmentation needs an rng")
        span = cfg.origin_shift_frac * cfg.input_size
        o_in = add_constant(o_in, rng.uniform(-span, span, size=(n, 2)))

    ph, pw = cfg.resolved_polar_shape()
    polar = polar_transform(batch, o_in, out_h=ph, out_w=pw,
                            max_radius=cfg.resolved_max_radius())
    logits, maps, _ = _run_classifier(model, polar, train,
                                      retain_maps=retain_maps)
    return ForwardTrace(logits=logits, heatmap=heat, origin_heatmap=o_hm,
                        origin_input=o_in, polar=polar, feature_maps=maps)


def forward_baseline(model, batch, train=False, retain_maps=False) -> ForwardTrace:
    """CCNN on the raw batch; PCNN expects a precomputed polar batch."""
    model.forward_count += 1
    logits, maps, _ = _run_classifier(model, batch, train,
                                      retain_maps=retain_maps)
    polar = batch if model.config.is_polar_classifier else None
    return ForwardTrace(logits=logits, polar=polar, feature_maps=maps)


def center_polar(batch, config: NetworkConfig):
    """Fixed-center polar transform used to feed PCNN variants."""
    n = batch.shape[0]
    c = (config.input_size - 1) / 2.0
    ph, pw = config.resolved_polar_shape()
    return polar_transform(batch, np.array([c, c]), out_h=ph, out_w=pw,
                           max_radius=config.resolved_max_radius())


def forward(model, batch, train=False, rng=None, retain_maps=False) -> ForwardTrace:
    """Dispatch on variant; PCNN input conversion happens here."""
    if model.config.is_ptn:
        return forward_ptn(model, batch, train=train, rng=rng,
                           retain_maps=retain_maps)
    if model.config.variant.startswith("PCNN"):
        batch = center_polar(batch, model.config)
    return forward_baseline(model, batch, train=train, retain_maps=retain_maps)


def augment_rotation(batch, rng):
    """Rotate every item by an independent continuous angle in [0, 2pi)."""
    angles = rng.uniform(0.0, 2.0 * np.pi, size=batch.shape[0])
    return similarity_warp(batch, angles)


def predict_tta(model, batch, n_rotations: int):
    """Sum class scores over evenly spaced input rotations.

    Returns (classes, summed_logits); ties break to the lowest class index.
    Costs exactly n_rotations forward passes.
    """
    if n_rotations < 1:
        raise ValueError("n_rotations must be >= 1")
    total = None
    for i in range(n_rotations):
        rotated = (batch if i == 0 else
                   similarity_warp(batch, 2.0 * np.pi * i / n_rotations))
        logits = forward(model, rotated, train=False).logits.data
        total = logits.copy() if total is None else total + logits
    return total.argmax(axis=1), total
