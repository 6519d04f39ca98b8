"""Training and evaluation loops with seeded end-to-end determinism.

Each epoch appends a metrics row (epoch,train_loss,train_err,val_err,
seconds) and the best-validation checkpoint is retained. Runs are
deterministic for a fixed seed and thread count; the wall-clock column is
the only part of the outputs that varies between identical runs.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import replace

import numpy as np

from .autodiff import Tensor, Tape, backward
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, config_to_text
from .datasets import DATASET_SPECS, load_split
from .network import (
    Model,
    augment_rotation,
    build,
    forward,
    forward_ptn,
    predict_tta,
)
from .optim import AdamState, adam_step

__all__ = [
    "TrainingDiverged",
    "train",
    "evaluate_model",
    "evaluate_checkpoint",
    "load_model",
    "ablate",
    "ABLATION_VARIANTS",
    "mean_origin_error",
]


class TrainingDiverged(RuntimeError):
    pass


def _as_batch(images_u8, dtype=np.float32):
    x = images_u8.astype(dtype) / dtype(255.0)
    return Tensor(x[:, None])


def _load_train_val(cfg: TrainConfig):
    spec = DATASET_SPECS[cfg.dataset]
    train_x, train_y = load_split(cfg.data_dir, cfg.dataset, "train")
    if "val" in spec.sizes:
        val_x, val_y = load_split(cfg.data_dir, cfg.dataset, "val")
    else:
        # carve the configured fraction off the training tail
        n_val = max(1, int(round(len(train_x) * cfg.val_fraction)))
        val_x, val_y = train_x[-n_val:], train_y[-n_val:]
        train_x, train_y = train_x[:-n_val], train_y[:-n_val]
    return train_x, train_y, val_x, val_y


def evaluate_model(model: Model, images_u8, labels, batch_size=256, tta=1):
    """Deterministic error%% and per-class confusion over a fixed order."""
    k = model.config.n_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    wrong = 0
    for lo in range(0, len(images_u8), batch_size):
        xb = _as_batch(images_u8[lo:lo + batch_size])
        yb = labels[lo:lo + batch_size]
        if tta > 1:
            pred, _ = predict_tta(model, xb, tta)
        else:
            pred = forward(model, xb, train=False).logits.data.argmax(axis=1)
        wrong += int((pred != yb).sum())
        np.add.at(confusion, (yb, pred), 1)
    return 100.0 * wrong / len(images_u8), confusion


def _loss_and_error(model, xb, yb, train, rng):
    from .ops import softmax_cross_entropy

    cfg = model.config
    if train and cfg.augment_rotation:
        xb = augment_rotation(xb, rng)
    trace = forward(model, xb, train=train, rng=rng)
    loss = softmax_cross_entropy(trace.logits, yb)
    errors = int((trace.logits.data.argmax(axis=1) != yb).sum())
    return loss, errors


def train(cfg: TrainConfig, run_dir, log=print):
    """Optimize the configured model; returns a summary dict.

    Writes metrics.csv, resolved.cfg, and best.ckpt under run_dir. Raises
    TrainingDiverged if the loss leaves the reals.
    """
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "resolved.cfg"), "w") as f:
        f.write(config_to_text(cfg))

    train_x, train_y, val_x, val_y = _load_train_val(cfg)
    model = build(cfg.network_config(), seed=cfg.seed)
    state = AdamState(model.params)
    log(f"[train] {cfg.variant} on {cfg.dataset}: "
        f"{len(train_x)} train / {len(val_x)} val, "
        f"{model.param_count()} params, seed {cfg.seed}")

    metrics_path = os.path.join(run_dir, "metrics.csv")
    ckpt_path = os.path.join(run_dir, "best.ckpt")
    best_val = float("inf")
    rows = []
    with open(metrics_path, "w", newline="") as f:
        csv.writer(f).writerow(
            ["epoch", "train_loss", "train_err", "val_err", "seconds"])

    n = len(train_x)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        shuffle_rng = np.random.default_rng(
            np.random.SeedSequence((cfg.seed, 0x5F, epoch)))
        aug_rng = np.random.default_rng(
            np.random.SeedSequence((cfg.seed, 0xA6, epoch)))
        order = shuffle_rng.permutation(n)
        total_loss = 0.0
        total_wrong = 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            xb = _as_batch(train_x[idx])
            yb = train_y[idx]
            model.zero_grad()
            with Tape() as tape:
                loss, wrong = _loss_and_error(model, xb, yb, True, aug_rng)
            lval = float(loss.data)
            if not np.isfinite(lval):
                raise TrainingDiverged(
                    f"loss {lval} at epoch {epoch}, step {lo // cfg.batch_size}")
            backward(loss, tape)
            adam_step(model.params, state, lr=cfg.lr, beta1=cfg.beta1,
                      beta2=cfg.beta2, eps=cfg.adam_eps)
            total_loss += lval * len(idx)
            total_wrong += wrong

        train_loss = total_loss / n
        train_err = 100.0 * total_wrong / n
        val_err, _ = evaluate_model(model, val_x, val_y)
        seconds = time.perf_counter() - t0
        rows.append({"epoch": epoch, "train_loss": train_loss,
                     "train_err": train_err, "val_err": val_err,
                     "seconds": seconds})
        with open(metrics_path, "a", newline="") as f:
            csv.writer(f).writerow(
                [epoch, f"{train_loss:.6f}", f"{train_err:.4f}",
                 f"{val_err:.4f}", f"{seconds:.2f}"])
        marker = ""
        if val_err < best_val:
            best_val = val_err
            save_checkpoint(ckpt_path, model.state_arrays())
            marker = " *"
        log(f"[train] epoch {epoch:3d}  loss {train_loss:.4f}  "
            f"train {train_err:5.2f}%  val {val_err:5.2f}%  "
            f"{seconds:.1f}s{marker}")

    return {"best_val_err": best_val, "metrics": rows, "ckpt": ckpt_path,
            "run_dir": run_dir, "param_count": model.param_count()}


def load_model(cfg: TrainConfig, ckpt_path) -> Model:
    model = build(cfg.network_config(), seed=cfg.seed)
    model.load_state_arrays(load_checkpoint(ckpt_path))
    return model


def evaluate_checkpoint(cfg: TrainConfig, ckpt_path, split="test", tta=1,
                        ensemble=None):
    """Error%% and confusion for a stored model on a dataset split.

    ensemble may name a second (cfg, ckpt) pair whose per-class scores are
    summed with the first model's before the argmax.
    """
    images, labels = load_split(cfg.data_dir, cfg.dataset, split)
    model = load_model(cfg, ckpt_path)
    if ensemble is None:
        return evaluate_model(model, images, labels, tta=tta)
    other = load_model(*ensemble)
    k = model.config.n_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    wrong = 0
    for lo in range(0, len(images), 256):
        xb = _as_batch(images[lo:lo + 256])
        yb = labels[lo:lo + 256]
        if tta > 1:
            _, sa = predict_tta(model, xb, tta)
            _, sb = predict_tta(other, xb, tta)
        else:
            sa = forward(model, xb, train=False).logits.data
            sb = forward(other, xb, train=False).logits.data
        pred = (sa + sb).argmax(axis=1)
        wrong += int((pred != yb).sum())
        np.add.at(confusion, (yb, pred), 1)
    return 100.0 * wrong / len(images), confusion


def mean_origin_error(model: Model, images_u8, limit=512, batch_size=256):
    """Mean distance between the predicted origin and the intensity centroid."""
    images_u8 = images_u8[:limit]
    dists = []
    for lo in range(0, len(images_u8), batch_size):
        xb = _as_batch(images_u8[lo:lo + batch_size])
        trace = forward_ptn(model, xb, train=False)
        arr = xb.data[:, 0]
        mass = arr.sum(axis=(1, 2)) + 1e-12
        xs = np.arange(arr.shape[2])
        ys = np.arange(arr.shape[1])
        cx = (arr.sum(axis=1) * xs).sum(axis=1) / mass
        cy = (arr.sum(axis=2) * ys).sum(axis=1) / mass
        target = np.stack([cx, cy], axis=1)
        dists.append(np.linalg.norm(trace.origin_input.data - target, axis=1))
    return float(np.concatenate(dists).mean())


ABLATION_VARIANTS = {
    "full": {},
    "no_origin_aug": {"origin_shift_frac": 0.0},
    "no_rotation_aug": {"augment_rotation": False},
    "no_wrap_padding": {"wrap_padding": False},
}


def _ablate_worker(args):
    base_cfg, name, seed, run_dir, threads = args
    if threads:
        try:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=threads):
                return _ablate_one(base_cfg, name, seed, run_dir)
        except ImportError:
            pass
    return _ablate_one(base_cfg, name, seed, run_dir)


def _ablate_one(base_cfg, name, seed, run_dir):
    cfg = replace(base_cfg, seed=seed, **ABLATION_VARIANTS[name])
    result = train(cfg, run_dir, log=lambda *_: None)
    test_x, test_y = load_split(cfg.data_dir, cfg.dataset, "test")
    model = load_model(cfg, result["ckpt"])
    err, _ = evaluate_model(model, test_x, test_y)
    return name, seed, err


def ablate(base_cfg: TrainConfig, seeds, out_dir, jobs=1, log=print):
    """Train full / -origin aug / -rotation aug / -wrap padding per seed.

    The same seeds are used for every configuration, so differences are
    attributable to the ablated factor. Returns {name: [per-seed errors]}
    and writes ablation.csv.
    """
    if not base_cfg.augment_rotation:
        raise ValueError("the ablation baseline must enable rotation "
                         "augmentation, otherwise removing it is a no-op")
    tasks = []
    for name in ABLATION_VARIANTS:
        for seed in seeds:
            run_dir = os.path.join(out_dir, f"{name}-s{seed}")
            tasks.append((base_cfg, name, seed, run_dir,
                          max(1, 2 // jobs) if jobs > 1 else 0))

    results = []
    if jobs > 1:
        import concurrent.futures as cf

        with cf.ProcessPoolExecutor(max_workers=jobs) as pool:
            for res in pool.map(_ablate_worker, tasks):
                results.append(res)
                log(f"[ablate] {res[0]} seed {res[1]}: {res[2]:.2f}%")
    else:
        for task in tasks:
            res = _ablate_worker(task)
            results.append(res)
            log(f"[ablate] {res[0]} seed {res[1]}: {res[2]:.2f}%")

    table = {name: [] for name in ABLATION_VARIANTS}
    for name, seed, err in results:
        table[name].append(err)
    path = os.path.join(out_dir, "ablation.csv")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["config", "seed", "test_err"])
        for name, seed, err in results:
            w.writerow([name, seed, f"{err:.4f}"])
        w.writerow([])
        w.writerow(["config", "mean_err", "std_err"])
        for name, errs in table.items():
            w.writerow([name, f"{np.mean(errs):.4f}", f"{np.std(errs):.4f}"])
    return table
