"""MNIST-family parsing and deterministic similarity-perturbed generation.

Four generated benchmarks, each built by warping base MNIST digits with
per-item draws from declared parameter ranges and full provenance:

  rotmnist   28x28, angles [0, 2pi), splits 10k/2k/50k
  mnist-r    28x28, angles [-pi/2, pi/2], 60k/10k
  mnist-rts  42x42 canvas, angles [-pi/4, pi/4], scales [0.7, 1.2],
             random in-frame placement, 60k/10k
  sim2mnist  96x96 canvas, angles [0, 2pi), scales [1, 2.4], anywhere
             in frame, 10k/5k/50k

Each split is written as an IDX image/label pair plus a provenance CSV
(index,label,angle_rad,scale,dx,dy). Items derive their RNG stream from
(seed, split, index), so generation is order-independent and byte-stable.
"""

from __future__ import annotations

import csv
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .sampler import warp_onto_canvas

__all__ = [
    "FormatError",
    "GenerationError",
    "Sim2Params",
    "DatasetSpec",
    "DATASET_SPECS",
    "parse_idx",
    "write_idx",
    "load_idx_images",
    "load_idx_labels",
    "parse_amat",
    "load_base_mnist",
    "generate",
    "load_split",
    "split_files",
]


class FormatError(ValueError):
    """A malformed input file; the message locates the defect."""


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Sim2Params:
    """Ground-truth similarity transform applied to one generated item."""

    angle: float
    scale: float
    dx: float
    dy: float


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    canvas: int
    angle_range: tuple
    scale_range: tuple
    translate: bool
    sizes: dict  # split -> count
    seed: int = 0

    def with_seed(self, seed):
        return DatasetSpec(self.name, self.canvas, self.angle_range,
                           self.scale_range, self.translate, self.sizes, seed)


DATASET_SPECS = {
    "rotmnist": DatasetSpec(
        "rotmnist", 28, (0.0, 2 * math.pi), (1.0, 1.0), False,
        {"train": 10_000, "val": 2_000, "test": 50_000}),
    "mnist-r": DatasetSpec(
        "mnist-r", 28, (-math.pi / 2, math.pi / 2), (1.0, 1.0), False,
        {"train": 60_000, "test": 10_000}),
    "mnist-rts": DatasetSpec(
        "mnist-rts", 42, (-math.pi / 4, math.pi / 4), (0.7, 1.2), True,
        {"train": 60_000, "test": 10_000}),
    "sim2mnist": DatasetSpec(
        "sim2mnist", 96, (0.0, 2 * math.pi), (1.0, 2.4), True,
        {"train": 10_000, "val": 5_000, "test": 50_000}),
}


# -- IDX container ---------------------------------------------------------

def parse_idx(blob: bytes) -> np.ndarray:
    """Decode an IDX byte stream into a uint8 array."""
    if len(blob) < 4:
        raise FormatError("IDX header truncated at byte 0")
    zero1, zero2, dtype, rank = struct.unpack(">BBBB", blob[:4])
    if zero1 != 0 or zero2 != 0:
        raise FormatError("bad IDX magic at byte 0")
    if dtype != 0x08:
        raise FormatError(f"unsupported IDX element type 0x{dtype:02x} "
                          "at byte 2 (only unsigned byte is supported)")
    need = 4 + 4 * rank
    if len(blob) < need:
        raise FormatError(f"IDX dimension table truncated at byte {len(blob)}")
    shape = struct.unpack(f">{rank}I", blob[4:need])
    count = int(np.prod(shape)) if rank else 1
    if len(blob) != need + count:
        raise FormatError(f"IDX payload has {len(blob) - need} bytes at byte "
                          f"{need}, expected {count}")
    return np.frombuffer(blob, dtype=np.uint8, offset=need).reshape(shape).copy()


def write_idx(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    head = struct.pack(">BBBB", 0, 0, 0x08, arr.ndim)
    head += struct.pack(f">{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def load_idx_images(path) -> np.ndarray:
    """IDX images as float32 in [0, 1]."""
    with open(path, "rb") as f:
        raw = parse_idx(f.read())
    return raw.astype(np.float32) / 255.0


def load_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = parse_idx(f.read())
    return raw.astype(np.int64)


# -- amat text format ------------------------------------------------------

def parse_amat(text: str, side: int = 28):
    """Whitespace-separated rows of side*side pixels plus a trailing label."""
    images = []
    labels = []
    want = side * side + 1
    for ln, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != want:
            raise FormatError(f"line {ln}: expected {want} columns, "
                              f"got {len(parts)}")
        try:
            vals = np.array([float(p) for p in parts])
        except ValueError as e:
            raise FormatError(f"line {ln}: {e}") from None
        images.append(np.clip(vals[:-1], 0.0, 1.0).reshape(side, side))
        labels.append(int(vals[-1]))
    if not images:
        raise FormatError("line 1: no rows")
    return (np.stack(images).astype(np.float32),
            np.asarray(labels, dtype=np.int64))


# -- generation ------------------------------------------------------------

def load_base_mnist(data_dir):
    """The four canonical IDX files from data_dir."""
    files = {
        "train_images": "train-images-idx3-ubyte",
        "train_labels": "train-labels-idx1-ubyte",
        "test_images": "t10k-images-idx3-ubyte",
        "test_labels": "t10k-labels-idx1-ubyte",
    }
    out = {}
    for key, fn in files.items():
        path = os.path.join(data_dir, fn)
        if not os.path.exists(path):
            raise FileNotFoundError(f"base MNIST file missing: {path}")
        out[key] = (load_idx_images(path) if "images" in key
                    else load_idx_labels(path))
    return (out["train_images"], out["train_labels"],
            out["test_images"], out["test_labels"])


def _ink_radius(digit, threshold=1.0 / 510.0):
    """Farthest inked pixel from the frame center, in pixels.

    The threshold is half a uint8 level: anything fainter cannot round to
    visible ink on the canvas.
    """
    h, w = digit.shape
    ys, xs = np.nonzero(digit > threshold)
    if ys.size == 0:
        return 0.0
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    return float(np.hypot(xs - cx, ys - cy).max())


def _split_bases(spec, train_images, train_labels, test_images, test_labels):
    """Deterministic assignment of base digits to splits, no reuse across
    train/val; the test split draws from the untouched remainder."""
    sizes = spec.sizes
    n_train = sizes["train"]
    n_val = sizes.get("val", 0)
    n_test = sizes["test"]
    if n_train + n_val <= len(train_images):
        head_imgs, head_lbls = train_images, train_labels
    else:
        raise GenerationError("not enough base digits for the train/val split")
    out = {
        "train": (head_imgs[:n_train], head_lbls[:n_train]),
    }
    if n_val:
        out["val"] = (head_imgs[n_train:n_train + n_val],
                      head_lbls[n_train:n_train + n_val])
    rest_imgs = np.concatenate([train_images[n_train + n_val:], test_images])
    rest_lbls = np.concatenate([train_labels[n_train + n_val:], test_labels])
    if n_test > len(rest_imgs):
        raise GenerationError("not enough held-out base digits for the test split")
    order = np.random.default_rng(
        np.random.SeedSequence((spec.seed, 0xBA5E))).permutation(len(rest_imgs))
    pick = order[:n_test]
    out["test"] = (rest_imgs[pick], rest_lbls[pick])
    return out


def _draw_params(spec, split_idx, index, ink_r):
    rng = np.random.default_rng(
        np.random.SeedSequence((spec.seed, split_idx, index)))
    a_lo, a_hi = spec.angle_range
    s_lo, s_hi = spec.scale_range
    angle = float(rng.uniform(a_lo, a_hi))
    scale = float(rng.uniform(s_lo, s_hi))
    dx = dy = 0.0
    if spec.translate:
        # bilinear reads reach sqrt(2) px beyond the farthest inked source
        margin = (ink_r + 1.5) * scale
        half = (spec.canvas - 1) / 2.0
        room = half - margin
        if room < 0:
            raise GenerationError(
                f"scaled digit (radius {margin:.1f}px) exceeds the "
                f"{spec.canvas}px canvas")
        dx = float(rng.uniform(-room, room))
        dy = float(rng.uniform(-room, room))
    return Sim2Params(angle, scale, dx, dy)


SPLIT_INDEX = {"train": 1, "val": 2, "test": 3}


def split_files(out_dir, name, split):
    stem = os.path.join(str(out_dir), f"{name}-{split}")
    return (stem + "-images.idx", stem + "-labels.idx",
            stem + "-provenance.csv")


def generate(spec: DatasetSpec, base, out_dir, splits=None):
    """Write IDX pairs plus provenance CSVs for every split of the spec.

    base is (train_images, train_labels, test_images, test_labels) or a
    directory holding the canonical files. Returns the list of files written.
    """
    if isinstance(base, (str, os.PathLike)):
        base = load_base_mnist(base)
    os.makedirs(out_dir, exist_ok=True)
    assigned = _split_bases(spec, *base)
    written = []
    for split, (imgs, lbls) in assigned.items():
        if splits is not None and split not in splits:
            continue
        split_idx = SPLIT_INDEX[split]
        canvas = spec.canvas
        n = len(imgs)
        out = np.empty((n, canvas, canvas), dtype=np.uint8)
        prov = []
        center = ((canvas - 1) / 2.0, (canvas - 1) / 2.0)
        for i in range(n):
            digit = imgs[i]
            p = _draw_params(spec, split_idx, i, _ink_radius(digit))
            placed = warp_onto_canvas(
                digit, (canvas, canvas), p.angle, p.scale,
                (center[0] + p.dx, center[1] + p.dy))
            out[i] = np.clip(np.rint(placed * 255.0), 0, 255).astype(np.uint8)
            prov.append(p)
        img_path, lbl_path, prov_path = split_files(out_dir, spec.name, split)
        with open(img_path, "wb") as f:
            f.write(write_idx(out))
        with open(lbl_path, "wb") as f:
            f.write(write_idx(lbls.astype(np.uint8)))
        with open(prov_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["index", "label", "angle_rad", "scale", "dx", "dy"])
            for i, p in enumerate(prov):
                w.writerow([i, int(lbls[i]), repr(p.angle), repr(p.scale),
                            repr(p.dx), repr(p.dy)])
        written.extend([img_path, lbl_path, prov_path])
    return written


def load_split(out_dir, name, split):
    """(images uint8 (N,H,W), labels int64) for a generated split.

    Images stay uint8 so large splits fit comfortably in memory; batch
    assembly converts to float.
    """
    img_path, lbl_path, _ = split_files(out_dir, name, split)
    with open(img_path, "rb") as f:
        images = parse_idx(f.read())
    return images, load_idx_labels(lbl_path)


def load_provenance(out_dir, name, split):
    _, _, prov_path = split_files(out_dir, name, split)
    rows = []
    with open(prov_path, newline="") as f:
        for row in csv.DictReader(f):
            rows.append(Sim2Params(float(row["angle_rad"]),
                                   float(row["scale"]),
                                   float(row["dx"]), float(row["dy"])))
    return rows
