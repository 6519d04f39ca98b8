"""Architecture assembly, parameter budgets, and the shift-equivariance of
the wrap-padded classifier stack."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from polarnet.autodiff import Tensor, Tape, backward
from polarnet.network import (
    NetworkConfig,
    _run_classifier,
    augment_rotation,
    build,
    center_polar,
    forward,
    forward_baseline,
    forward_ptn,
    predict_tta,
)
from polarnet.ops import softmax_cross_entropy


def _batch(rng, n=4, size=28, dtype=np.float32):
    return Tensor(rng.uniform(size=(n, 1, size, size)).astype(dtype))


class TestBuild:
    def test_same_seed_bit_identical(self):
        a = build(NetworkConfig(variant="PTN-S"), seed=3)
        b = build(NetworkConfig(variant="PTN-S"), seed=3)
        for name in a.params:
            npt.assert_array_equal(a.params[name].data, b.params[name].data)

    def test_different_seed_differs(self):
        a = build(NetworkConfig(variant="PTN-S"), seed=3)
        b = build(NetworkConfig(variant="PTN-S"), seed=4)
        assert any((a.params[n].data != b.params[n].data).any()
                   for n in a.params)

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError, match="variant"):
            NetworkConfig(variant="PTN-XL")

    @pytest.mark.parametrize("variant,published", [
        ("PTN-B", 129_000),
        ("CCNN-S", 22_000),
        ("CCNN-B", 124_000),
        ("PCNN-S", 22_000),
        ("PCNN-B", 124_000),
    ])
    def test_param_counts_within_ten_percent(self, variant, published):
        model = build(NetworkConfig(variant=variant), seed=0)
        count = model.param_count()
        assert abs(count - published) / published <= 0.10, \
            f"{variant}: {count} vs published {published}"

    @pytest.mark.xfail(
        strict=True,
        reason="three 20-filter predictor blocks plus the seven-block "
               "classifier total 29,790 trainable parameters, 10.3% above "
               "the published 27k; no faithful reading of the stated "
               "architecture reaches the 10% band")
    def test_ptn_s_param_count_within_ten_percent(self):
        model = build(NetworkConfig(variant="PTN-S"), seed=0)
        count = model.param_count()
        assert abs(count - 27_000) / 27_000 <= 0.10, f"PTN-S: {count}"

    def test_ptn_s_exact_count_documented(self):
        # predictor 7,520 (220 + 2*3,640 + 20) + classifier 22,270
        model = build(NetworkConfig(variant="PTN-S"), seed=0)
        assert model.param_count() == 29_790

    def test_96px_input_grows_stride(self):
        model = build(NetworkConfig(variant="PTN-B", input_size=96), seed=0)
        assert model.heatmap_stride == 4
        assert len(model.cls_blocks) == 10
        assert model.classifier_stride == 16


class TestForward:
    def test_untrained_origin_near_center(self):
        rng = np.random.default_rng(0)
        model = build(NetworkConfig(variant="PTN-S"), seed=1)
        trace = forward_ptn(model, _batch(rng, n=8), train=False)
        center = (28 - 1) / 2.0
        tol = 0.15 * 28
        assert np.all(np.abs(trace.origin_input.data - center) <= tol)

    def test_train_eval_origin_equal_when_augmentation_off(self):
        # with momentum 1 the running stats equal the batch stats after one
        # train pass, so only the augmentation gate can differ
        rng = np.random.default_rng(1)
        cfg = NetworkConfig(variant="PTN-S", origin_shift_frac=0.0)
        model = build(cfg, seed=2)
        model.bn_momentum = 1.0
        xb = _batch(rng)
        t_train = forward_ptn(model, xb, train=True)
        t_eval = forward_ptn(model, xb, train=False)
        npt.assert_array_equal(t_train.origin_input.data,
                               t_eval.origin_input.data)

    def test_origin_aug_requires_rng_and_perturbs(self):
        rng = np.random.default_rng(2)
        cfg = NetworkConfig(variant="PTN-S", origin_shift_frac=0.05)
        model = build(cfg, seed=2)
        xb = _batch(rng)
        with pytest.raises(ValueError, match="rng"):
            forward_ptn(model, xb, train=True)
        # train-mode origins do not depend on the running buffers, so the
        # difference between the two passes is exactly the jitter
        t_aug = forward_ptn(model, xb, train=True,
                            rng=np.random.default_rng(7))
        model.config.origin_shift_frac = 0.0
        t_plain = forward_ptn(model, xb, train=True)
        jitter = np.abs(t_aug.origin_input.data - t_plain.origin_input.data)
        assert jitter.max() > 0
        assert jitter.max() <= 0.05 * 28 + 1e-6

    def test_pcnn_equals_ptn_with_center_origin(self):
        rng = np.random.default_rng(3)
        ptn = build(NetworkConfig(variant="PTN-S"), seed=5)
        pcnn = build(NetworkConfig(variant="PCNN-S"), seed=6)
        for name in pcnn.params:
            pcnn.params[name].data = ptn.params[name].data.copy()
        for name in pcnn.buffers:
            pcnn.buffers[name] = ptn.buffers[name].copy()
        xb = _batch(rng)
        center = (28 - 1) / 2.0
        via_ptn = forward_ptn(ptn, xb, train=False,
                              origin_override=[center, center]).logits.data
        via_pcnn = forward_baseline(pcnn, center_polar(xb, pcnn.config),
                                    train=False).logits.data
        npt.assert_allclose(via_ptn, via_pcnn, atol=1e-5)

    def test_ccnn_logits_shape(self):
        rng = np.random.default_rng(4)
        model = build(NetworkConfig(variant="CCNN-S"), seed=0)
        trace = forward(model, _batch(rng, n=6), train=False)
        assert trace.logits.shape == (6, 10)


class TestClassifierEquivariance:
    def _model(self):
        return build(NetworkConfig(variant="PCNN-S"), seed=8)

    def test_feature_maps_shift_with_polar_rows(self):
        # shifting the polar input by k*stride rows shifts the pre-pool
        # feature maps by k rows
        rng = np.random.default_rng(5)
        model = self._model()
        sp = model.classifier_stride
        polar = rng.uniform(size=(2, 1, 28, 28)).astype(np.float32)
        _, _, feats = _run_classifier(model, Tensor(polar), train=False,
                                      retain_maps=False)
        base = feats.data
        for k in (1, 3, 7):
            shifted_in = np.roll(polar, k * sp, axis=2)
            _, _, feats_k = _run_classifier(model, Tensor(shifted_in),
                                            train=False)
            npt.assert_allclose(feats_k.data, np.roll(base, k, axis=2),
                                atol=1e-4)

    def test_logits_invariant_to_polar_row_shift(self):
        rng = np.random.default_rng(6)
        model = self._model()
        sp = model.classifier_stride
        polar = rng.uniform(size=(3, 1, 28, 28)).astype(np.float32)
        base = forward_baseline(model, Tensor(polar), train=False).logits.data
        for k in (sp, 3 * sp, 14):
            out = forward_baseline(model, Tensor(np.roll(polar, k, axis=2)),
                                   train=False).logits.data
            npt.assert_allclose(out, base, atol=1e-4)

    def test_gradient_reaches_origin_predictor(self):
        # finite differences on a sample of predictor weights, float64
        rng = np.random.default_rng(7)
        cfg = NetworkConfig(variant="PTN-S", origin_shift_frac=0.0)
        model = build(cfg, seed=9, dtype=np.float64)
        xb = _batch(rng, n=2, dtype=np.float64)
        labels = np.array([1, 7])

        def loss_fn():
            trace = forward_ptn(model, xb, train=False)
            return softmax_cross_entropy(trace.logits, labels)

        model.zero_grad()
        with Tape() as tape:
            loss = loss_fn()
        backward(loss, tape)

        checked = 0
        for pname in ("pred0.w", "pred2.w", "heat.w"):
            t = model.params[pname]
            flat = t.data.reshape(-1)
            gflat = t.grad.reshape(-1)
            idx = rng.choice(flat.size, size=4, replace=False)
            eps = 1e-5
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                fp = float(loss_fn().data)
                flat[i] = orig - eps
                fm = float(loss_fn().data)
                flat[i] = orig
                fd = (fp - fm) / (2 * eps)
                err = abs(gflat[i] - fd) / max(1.0, abs(gflat[i]), abs(fd))
                assert err < 1e-2, f"{pname}[{i}]: tape {gflat[i]} vs fd {fd}"
                checked += 1
        assert checked == 12


class TestAugmentation:
    def test_seeded_rotation_reproducible(self):
        rng = np.random.default_rng(11)
        batch = _batch(rng, n=5)
        out1 = augment_rotation(batch, np.random.default_rng(42)).data
        out2 = augment_rotation(batch, np.random.default_rng(42)).data
        npt.assert_array_equal(out1, out2)

    def test_rotation_preserves_disk_mass(self):
        n = 28
        c = (n - 1) / 2.0
        yy, xx = np.mgrid[0:n, 0:n]
        disk = (1.0 / (1.0 + np.exp(2.0 * (np.hypot(xx - c, yy - c) - 8.0))))
        batch = Tensor(np.repeat(disk[None, None], 6, axis=0).astype(np.float32))
        out = augment_rotation(batch, np.random.default_rng(1)).data
        for i in range(6):
            assert abs(out[i].mean() - disk.mean()) / disk.mean() < 0.01


class TestPredictTta:
    def test_single_rotation_equals_plain(self):
        rng = np.random.default_rng(12)
        model = build(NetworkConfig(variant="PTN-S"), seed=3)
        xb = _batch(rng, n=3)
        plain = forward(model, xb, train=False).logits.data.argmax(axis=1)
        cls, _ = predict_tta(model, xb, 1)
        npt.assert_array_equal(cls, plain)

    def test_costs_n_forward_passes(self):
        rng = np.random.default_rng(13)
        model = build(NetworkConfig(variant="PTN-S"), seed=3)
        xb = _batch(rng, n=2)
        model.forward_count = 0
        predict_tta(model, xb, 8)
        assert model.forward_count == 8

    def test_orbit_sum_invariant_to_quarter_turn_start(self):
        # starts that are exact permutations compose exactly with the other
        # orbit members, so the summed scores match to float accumulation
        rng = np.random.default_rng(14)
        model = build(NetworkConfig(variant="PTN-S"), seed=4)
        xb = _batch(rng, n=2)
        from polarnet.sampler import similarity_warp
        _, base_scores = predict_tta(model, xb, 8)
        for quarter in (1, 2, 3):
            start = similarity_warp(xb, quarter * math.pi / 2)
            _, scores = predict_tta(model, start, 8)
            npt.assert_allclose(scores, base_scores, atol=1e-4)

    def test_rejects_zero_rotations(self):
        model = build(NetworkConfig(variant="PTN-S"), seed=3)
        with pytest.raises(ValueError, match="n_rotations"):
            predict_tta(model, _batch(np.random.default_rng(0)), 0)
