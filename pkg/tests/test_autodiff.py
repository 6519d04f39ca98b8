"""Tape mechanics: accumulation, determinism, composite backward."""

import numpy as np
import numpy.testing as npt
import pytest

from polarnet.autodiff import Tensor, Tape, backward, active_tape
from polarnet.ops import (
    PaddingMode,
    add,
    batch_norm,
    conv2d,
    global_average_pool,
    reduce_sum,
    relu,
    softmax_cross_entropy,
)


def test_sum_backward_is_ones():
    x = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
    with Tape() as tape:
        loss = reduce_sum(x)
    backward(loss, tape)
    npt.assert_array_equal(x.grad, np.ones((3, 4)))


def test_relu_sum_backward_positive_region():
    x = Tensor(np.full((2, 2), 3.0), requires_grad=True)
    with Tape() as tape:
        loss = reduce_sum(relu(x))
    backward(loss, tape)
    npt.assert_array_equal(x.grad, np.ones((2, 2)))


def test_non_scalar_loss_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = relu(x)
    with pytest.raises(ValueError, match="scalar"):
        backward(y, tape)


def test_fanout_accumulates():
    # a tensor feeding two branches collects both contributions
    x = Tensor(np.ones(4), requires_grad=True)
    with Tape() as tape:
        loss = reduce_sum(add(relu(x), relu(x)))
    backward(loss, tape)
    npt.assert_array_equal(x.grad, np.full(4, 2.0))


def test_no_recording_outside_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    assert active_tape() is None
    y = relu(x)
    assert y.requires_grad is False


def test_composite_backward_matches_finite_differences():
    # conv -> bn -> relu -> pool -> cross-entropy, checked by central
    # differences at 64 bit on a sample of coordinates
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((2, 2, 6, 6)), requires_grad=True)
    k = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.5, requires_grad=True)
    gamma = Tensor(np.ones(3), requires_grad=True)
    beta = Tensor(np.zeros(3), requires_grad=True)
    labels = np.array([0, 2])

    def forward():
        rm, rv = np.zeros(3), np.ones(3)
        h = conv2d(x, k, padding=PaddingMode.WRAP)
        h = batch_norm(h, gamma, beta, rm, rv, train=True)
        h = relu(h)
        pooled = global_average_pool(h)
        return softmax_cross_entropy(pooled, labels)

    with Tape() as tape:
        loss = forward()
    backward(loss, tape)

    eps = 1e-5
    for t in (x, k, gamma, beta):
        flat = t.data.reshape(-1)
        gflat = t.grad.reshape(-1)
        idx = rng.choice(flat.size, size=min(6, flat.size), replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(forward().data)
            flat[i] = orig - eps
            fm = float(forward().data)
            flat[i] = orig
            fd = (fp - fm) / (2 * eps)
            err = abs(gflat[i] - fd) / max(1.0, abs(gflat[i]), abs(fd))
            assert err < 1e-3, f"{t.name}: {gflat[i]} vs {fd}"


def test_backward_determinism_bit_identical():
    rng = np.random.default_rng(1)
    xdata = rng.standard_normal((2, 1, 5, 5)).astype(np.float32)
    kdata = rng.standard_normal((2, 1, 3, 3)).astype(np.float32)
    grads = []
    for _ in range(2):
        x = Tensor(xdata.copy(), requires_grad=True)
        k = Tensor(kdata.copy(), requires_grad=True)
        with Tape() as tape:
            out = conv2d(x, k, padding=PaddingMode.WRAP)
            loss = softmax_cross_entropy(global_average_pool(relu(out)), [1, 0])
        backward(loss, tape)
        grads.append((x.grad.copy(), k.grad.copy()))
    npt.assert_array_equal(grads[0][0], grads[1][0])
    npt.assert_array_equal(grads[0][1], grads[1][1])
