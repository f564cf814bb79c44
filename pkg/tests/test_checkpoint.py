import struct

import numpy as np
import pytest

from msif.checkpoint import CheckpointError, CheckpointVersionError, load_checkpoint, save_checkpoint
from msif.module import Module, param
from msif.tensor import ShapeError


class Tiny(Module):
    def __init__(self):
        self.w = param(np.arange(6.0).reshape(2, 3))
        self.layers = [Inner(), Inner()]


class Inner(Module):
    def __init__(self):
        self.b = param(np.ones(2))


def test_roundtrip_is_bit_exact(tmp_path, rng):
    arrays = {"a": rng.standard_normal((3, 4)), "s": np.array(2.5), "z": np.zeros((0, 2))}
    save_checkpoint(tmp_path / "x.ckpt", arrays, {"epoch": 3})
    back, meta = load_checkpoint(tmp_path / "x.ckpt")
    assert list(back) == ["a", "s", "z"]
    for k in arrays:
        np.testing.assert_array_equal(back[k], arrays[k])
        assert back[k].shape == arrays[k].shape
    assert meta == {"epoch": 3}


def test_version_mismatch(tmp_path):
    p = tmp_path / "x.ckpt"
    save_checkpoint(p, {"a": np.ones(2)})
    buf = bytearray(p.read_bytes())
    buf[8:12] = struct.pack("<I", 99)
    p.write_bytes(bytes(buf))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(p)


def test_truncated_and_foreign_files(tmp_path):
    p = tmp_path / "x.ckpt"
    save_checkpoint(p, {"a": np.ones(4)})
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(p)
    p.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(p)
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.ckpt")


def test_module_names_and_state_roundtrip(tmp_path):
    m = Tiny()
    assert [n for n, _ in m.named_parameters()] == ["w", "layers.0.b", "layers.1.b"]
    save_checkpoint(tmp_path / "m.ckpt", m.state_dict())
    m2 = Tiny()
    m2.w.data[:] = 0
    m2.load_state_dict(load_checkpoint(tmp_path / "m.ckpt")[0])
    np.testing.assert_array_equal(m2.w.data, m.w.data)


def test_load_state_dict_rejects_mismatch():
    m = Tiny()
    state = m.state_dict()
    state["w"] = np.zeros((3, 2))
    with pytest.raises(ShapeError, match="w"):
        m.load_state_dict(state)
    del state["w"]
    with pytest.raises(ShapeError, match="missing"):
        m.load_state_dict(state)
