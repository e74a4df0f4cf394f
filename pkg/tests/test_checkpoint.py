"""Checkpoint container round-trip and corruption tests."""

import struct

import numpy as np
import pytest

from tgshape.autodiff import Tensor
from tgshape.checkpoint import (CheckpointError, load_checkpoint, restore_into,
                                save_checkpoint)


def sample_params():
    r = np.random.default_rng(0)
    return {
        "E.conv1.w": Tensor(r.normal(size=(8, 4, 4, 4, 4)), requires_grad=True),
        "E.conv1.b": Tensor(r.normal(size=8), requires_grad=True),
        "Ds.fc0.w": Tensor(r.normal(size=(16, 32)), requires_grad=True),
        "scalar": Tensor(np.array(2.5), requires_grad=True),
    }


def test_roundtrip(tmp_path):
    params = sample_params()
    path = tmp_path / "m.impw"
    save_checkpoint(path, params)
    loaded = load_checkpoint(path)
    assert set(loaded) == set(params)
    for k, p in params.items():
        assert loaded[k].shape == p.data.shape
        assert np.allclose(loaded[k], p.data.astype(np.float32))


def test_header_layout(tmp_path):
    path = tmp_path / "m.impw"
    save_checkpoint(path, {"x": Tensor([1.0, 2.0])})
    buf = path.read_bytes()
    assert buf[:4] == b"IMPW"
    version, count = struct.unpack_from("<II", buf, 4)
    assert version == 1 and count == 1
    (nlen,) = struct.unpack_from("<H", buf, 12)
    assert buf[14:14 + nlen] == b"x"


def test_restore_into(tmp_path):
    params = sample_params()
    path = tmp_path / "m.impw"
    save_checkpoint(path, params)
    fresh = {k: Tensor(np.zeros(p.data.shape), requires_grad=True)
             for k, p in params.items()}
    restore_into(fresh, load_checkpoint(path))
    for k in params:
        assert np.allclose(fresh[k].data, params[k].data.astype(np.float32))


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.impw"
    path.write_bytes(b"NOPE" + b"\x00" * 8)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "m.impw"
    save_checkpoint(path, {"x": Tensor(np.ones(10))})
    truncated = path.read_bytes()[:-8]
    path.write_bytes(truncated)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_trailing_garbage(tmp_path):
    path = tmp_path / "m.impw"
    save_checkpoint(path, {"x": Tensor(np.ones(2))})
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_restore_shape_mismatch(tmp_path):
    path = tmp_path / "m.impw"
    save_checkpoint(path, {"x": Tensor(np.ones(3))})
    fresh = {"x": Tensor(np.zeros(4), requires_grad=True)}
    with pytest.raises(CheckpointError):
        restore_into(fresh, load_checkpoint(path))


def test_restore_name_mismatch(tmp_path):
    path = tmp_path / "m.impw"
    save_checkpoint(path, {"x": Tensor(np.ones(3))})
    fresh = {"y": Tensor(np.zeros(3), requires_grad=True)}
    with pytest.raises(CheckpointError):
        restore_into(fresh, load_checkpoint(path))
