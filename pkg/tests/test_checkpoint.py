"""Checkpoint container round trips and wire format."""

import struct

import numpy as np
import numpy.testing as npt
import pytest

from polarnet.checkpoint import (
    MAGIC,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from polarnet.network import NetworkConfig, build, forward
from polarnet.autodiff import Tensor


def test_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {
        "a.w": rng.standard_normal((3, 2, 3, 3)).astype(np.float32),
        "b.gamma": rng.standard_normal(7).astype(np.float32),
        "scalarish": np.array([1.5], dtype=np.float32),
    }
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, arrays)
    loaded = load_checkpoint(path)
    assert list(loaded) == list(arrays)
    for k in arrays:
        npt.assert_array_equal(loaded[k], arrays[k])


def test_wire_layout(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {"x": np.arange(6, dtype=np.float32).reshape(2, 3)})
    blob = path.read_bytes()
    assert blob[:8] == MAGIC
    name_len = struct.unpack("<Q", blob[8:16])[0]
    assert name_len == 1
    assert blob[16:17] == b"x"
    rank = struct.unpack("<Q", blob[17:25])[0]
    assert rank == 2
    assert struct.unpack("<QQ", blob[25:41]) == (2, 3)
    vals = np.frombuffer(blob[41:], dtype="<f4")
    npt.assert_array_equal(vals, np.arange(6, dtype=np.float32))


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_truncation_located(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {"x": np.ones((4, 4), dtype=np.float32)})
    (tmp_path / "t.ckpt").write_bytes(path.read_bytes()[:-7])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "t.ckpt")


def test_model_state_roundtrip_preserves_outputs(tmp_path):
    rng = np.random.default_rng(1)
    model = build(NetworkConfig(variant="PTN-S"), seed=11)
    # make running buffers nontrivial before saving
    xb = Tensor(rng.uniform(size=(4, 1, 28, 28)).astype(np.float32))
    forward(model, xb, train=True, rng=rng)
    before = forward(model, xb, train=False).logits.data
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, model.state_arrays())

    clone = build(NetworkConfig(variant="PTN-S"), seed=99)
    clone.load_state_arrays(load_checkpoint(path))
    after = forward(clone, xb, train=False).logits.data
    npt.assert_array_equal(before, after)


def test_shape_mismatch_rejected(tmp_path):
    model = build(NetworkConfig(variant="PTN-S"), seed=0)
    state = model.state_arrays()
    state["cls0.w"] = np.zeros((5, 5), dtype=np.float32)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, state)
    other = build(NetworkConfig(variant="PTN-S"), seed=0)
    with pytest.raises(ValueError, match="shape mismatch"):
        other.load_state_arrays(load_checkpoint(path))


def test_missing_parameter_rejected(tmp_path):
    model = build(NetworkConfig(variant="PTN-S"), seed=0)
    state = model.state_arrays()
    state.pop("head.b")
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, state)
    with pytest.raises(ValueError, match="missing"):
        model.load_state_arrays(load_checkpoint(path))
