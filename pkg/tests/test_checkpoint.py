import numpy as np
import pytest

from descatter import checkpoint
from descatter.errors import IoFailure


def test_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "enc.w": rng.standard_normal((4, 3, 3, 3)).astype(np.float32),
        "enc.b": rng.standard_normal(4).astype(np.float32),
        "scalar": np.float32(3.5).reshape(()),
    }
    meta = {"base_width": 32, "classes": 2}
    p = tmp_path / "model.ckpt"
    checkpoint.save(p, tensors, meta)
    back, meta2 = checkpoint.load(p)
    assert meta2 == meta
    assert set(back) == set(tensors)
    for k in tensors:
        np.testing.assert_array_equal(back[k],
                                      np.asarray(tensors[k], np.float32))


def test_float64_quantizes_once_then_stable(tmp_path):
    rng = np.random.default_rng(1)
    t = {"w": rng.standard_normal(100)}
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    checkpoint.save(p1, t)
    once, _ = checkpoint.load(p1)
    checkpoint.save(p2, once)
    twice, _ = checkpoint.load(p2)
    np.testing.assert_array_equal(once["w"], twice["w"])
    np.testing.assert_allclose(once["w"], t["w"], rtol=1e-6)


def test_bad_magic(tmp_path):
    p = tmp_path / "junk.ckpt"
    p.write_bytes(b"NOTACKPT" + b"\x00" * 32)
    with pytest.raises(IoFailure):
        checkpoint.load(p)


def test_truncated_payload(tmp_path):
    p = tmp_path / "model.ckpt"
    checkpoint.save(p, {"w": np.zeros(10, np.float32)})
    data = p.read_bytes()
    p.write_bytes(data[:-8])
    with pytest.raises(IoFailure):
        checkpoint.load(p)
