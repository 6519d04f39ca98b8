"""Heatmap normalization, centroid, and frame conversion."""

import numpy as np
import numpy.testing as npt
import pytest

from polarnet.autodiff import Tensor, Tape, backward
from polarnet.origin import centroid, spatial_softmax, to_input_frame


class TestSpatialSoftmax:
    def test_constant_map_is_uniform(self):
        out = spatial_softmax(Tensor(np.full((2, 1, 3, 4), 7.0)))
        npt.assert_allclose(out.data, 1.0 / 12.0)

    def test_dominant_entry_saturates(self):
        raw = np.zeros((1, 1, 4, 4))
        raw[0, 0, 2, 1] = 50.0
        out = spatial_softmax(Tensor(raw))
        assert out.data[0, 0, 2, 1] >= 1.0 - 1e-9

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(42)
        raw = rng.standard_normal((1, 1, 3, 3)) * 3.0
        out = spatial_softmax(Tensor(raw))
        ref = np.exp(raw[0, 0]) / np.exp(raw[0, 0]).sum()
        npt.assert_allclose(out.data[0, 0], ref, rtol=1e-12)

    def test_positive_and_normalized(self):
        rng = np.random.default_rng(1)
        out = spatial_softmax(Tensor(rng.standard_normal((3, 1, 5, 5)) * 10))
        assert (out.data > 0).all()
        npt.assert_allclose(out.data.reshape(3, -1).sum(axis=1), 1.0,
                            rtol=1e-12)


class TestCentroid:
    def test_unit_mass(self):
        h = np.zeros((1, 1, 3, 3))
        h[0, 0, 1, 2] = 1.0
        out = centroid(Tensor(h))
        npt.assert_allclose(out.data[0], [2.0, 1.0])

    def test_uniform_map_center(self):
        h = np.full((1, 1, 4, 4), 1 / 16.0)
        out = centroid(Tensor(h))
        npt.assert_allclose(out.data[0], [1.5, 1.5])

    def test_weighted_mean(self):
        h = np.zeros((1, 1, 3, 3))
        h[0, 0, 0, 0] = 0.25
        h[0, 0, 0, 2] = 0.75
        out = centroid(Tensor(h))
        npt.assert_allclose(out.data[0], [1.5, 0.0])

    def test_translation_covariance(self):
        # circular shift of compact support moves the centroid exactly
        rng = np.random.default_rng(3)
        h = np.zeros((1, 1, 12, 12))
        h[0, 0, 4:7, 4:7] = rng.uniform(0.1, 1.0, size=(3, 3))
        h /= h.sum()
        base = centroid(Tensor(h)).data[0]
        for dx, dy in ((1, 0), (0, 2), (3, 3), (-2, 1)):
            shifted = np.roll(np.roll(h, dy, axis=2), dx, axis=3)
            got = centroid(Tensor(shifted)).data[0]
            npt.assert_allclose(got, base + [dx, dy], atol=1e-6)

    def test_inside_convex_hull(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            raw = rng.standard_normal((1, 1, 5, 7)) * 5
            h = spatial_softmax(Tensor(raw))
            x, y = centroid(h).data[0]
            assert 0.0 <= x <= 6.0
            assert 0.0 <= y <= 4.0

    def test_gradient_is_coordinate(self):
        # d(cx)/dh_j = x_j when the map is consumed directly
        h = Tensor(np.full((1, 1, 2, 3), 1 / 6.0), requires_grad=True)
        with Tape() as tape:
            out = centroid(h)
        out.grad = np.array([[1.0, 0.0]])
        for fn in reversed(tape.nodes):
            fn()
        expected = np.broadcast_to(np.arange(3.0)[None, :], (2, 3))
        npt.assert_allclose(h.grad[0, 0], expected)


class TestToInputFrame:
    def test_stride_one_identity(self):
        o = Tensor(np.array([[3.0, 4.0]]))
        npt.assert_array_equal(to_input_frame(o, 1).data, o.data)

    def test_stride_four_pixel_center(self):
        o = Tensor(np.array([[0.0, 0.0]]))
        npt.assert_allclose(to_input_frame(o, 4).data[0], [1.5, 1.5])

    def test_center_maps_near_center(self):
        hm, wm = 7, 7
        sp = 4
        o = Tensor(np.array([[(wm - 1) / 2.0, (hm - 1) / 2.0]]))
        out = to_input_frame(o, sp).data[0]
        in_center = ((wm * sp) - 1) / 2.0
        assert abs(out[0] - in_center) <= 0.5
        assert abs(out[1] - in_center) <= 0.5

    def test_invalid_stride(self):
        with pytest.raises(ValueError, match="stride"):
            to_input_frame(Tensor(np.zeros((1, 2))), 0)
