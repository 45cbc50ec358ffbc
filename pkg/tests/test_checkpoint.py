import struct
import zlib

import numpy as np
import pytest

from qaan import nn
from qaan.checkpoint import (FORMAT_VERSION, MAGIC, CheckpointError, check_shapes, decode, encode, load_checkpoint,
                             pack_adam, pack_net, pack_qbm, pack_rbm, save_checkpoint, unpack_adam_into,
                             unpack_net_into, unpack_qbm, unpack_rbm)
from qaan.qbm import QbmParams
from qaan.rbm import RbmParams


def sample_arrays():
    rng = np.random.default_rng(0)
    return {"a": rng.normal(size=(3, 4)), "scalar": np.array(2.5), "chain": rng.integers(0, 2, size=(5, 6)) * 1.0}


class TestFormat:
    def test_round_trip_bitwise(self, tmp_path):
        arrays = sample_arrays()
        save_checkpoint(tmp_path / "x.ckpt", "synthetic-bm", arrays, {"epoch": 3, "rng": {"data": [1, 2]}})
        tag, got, header = load_checkpoint(tmp_path / "x.ckpt")
        assert tag == "synthetic-bm" and header == {"epoch": 3, "rng": {"data": [1, 2]}}
        assert list(got) == list(arrays)
        for k, v in arrays.items():
            assert got[k].shape == v.shape
            np.testing.assert_array_equal(got[k], v)
        assert not (tmp_path / "x.ckpt.tmp").exists()

    def test_encoding_deterministic(self):
        assert encode("t", sample_arrays(), {"b": 1, "a": 2}) == encode("t", sample_arrays(), {"a": 2, "b": 1})

    @pytest.mark.parametrize("cut", [1, 4, 40, 200])
    def test_truncated(self, cut):
        buf = encode("t", sample_arrays())
        with pytest.raises(CheckpointError):
            decode(buf[:-cut])

    def test_flipped_bit(self):
        buf = bytearray(encode("t", sample_arrays()))
        buf[60] ^= 0x01
        with pytest.raises(CheckpointError, match="checksum"):
            decode(bytes(buf))

    def test_wrong_magic(self):
        with pytest.raises(CheckpointError, match="not a checkpoint"):
            decode(b"PK\x03\x04" + bytes(40))

    def test_future_version(self):
        body = bytearray(encode("t", {})[:-4])
        body[len(MAGIC): len(MAGIC) + 2] = struct.pack("<H", FORMAT_VERSION + 1)
        buf = bytes(body) + struct.pack("<I", zlib.crc32(bytes(body)))
        with pytest.raises(CheckpointError, match="version"):
            decode(buf)


class TestPacking:
    def test_rbm_qbm(self):
        rng = np.random.default_rng(1)
        r = RbmParams.init(4, 3, rng)
        q = QbmParams.init(4, 3, rng, gamma=2.0)
        _, arrays, _ = decode(encode("t", {**pack_rbm(r), **pack_qbm(q)}))
        for a, b in zip(unpack_rbm(arrays).arrays(), r.arrays()):
            np.testing.assert_array_equal(a, b)
        q2 = unpack_qbm(arrays)
        for a, b in zip((q2.gamma, q2.visible_bias, q2.hidden_bias, q2.weights),
                        (q.gamma, q.visible_bias, q.hidden_bias, q.weights)):
            np.testing.assert_array_equal(a, b)

    def test_net_and_adam(self):
        rng = np.random.default_rng(2)
        net = nn.DenseNet.build([3, 5, 2], ["leaky_relu", "tanh"], rng)
        opt = nn.Adam(lr=0.1)
        opt.step(net.params(), [rng.normal(size=p.shape) for p in net.params()])
        opt_arrays, meta = pack_adam(opt, "opt")
        _, arrays, _ = decode(encode("t", {**pack_net(net, "g"), **opt_arrays}))
        other = nn.DenseNet.build([3, 5, 2], ["leaky_relu", "tanh"], np.random.default_rng(3))
        unpack_net_into(other, arrays, "g")
        for a, b in zip(other.params(), net.params()):
            np.testing.assert_array_equal(a, b)
        opt2 = nn.Adam(lr=0.1)
        unpack_adam_into(opt2, arrays, "opt", meta)
        assert opt2.step_count == opt.step_count
        for a, b in zip(opt2.state_arrays(), opt.state_arrays()):
            np.testing.assert_array_equal(a, b)

    def test_shape_mismatch(self):
        rng = np.random.default_rng(4)
        net = nn.DenseNet.build([3, 5, 2], ["leaky_relu", "tanh"], rng)
        wider = nn.DenseNet.build([3, 6, 2], ["leaky_relu", "tanh"], rng)
        with pytest.raises(CheckpointError, match="shape"):
            unpack_net_into(wider, pack_net(net, "g"), "g")
        with pytest.raises(CheckpointError, match="shape"):
            check_shapes(pack_rbm(RbmParams.zeros(4, 3)), pack_rbm(RbmParams.zeros(4, 2)))

    def test_missing_array(self):
        with pytest.raises(CheckpointError, match="missing"):
            unpack_rbm({})
