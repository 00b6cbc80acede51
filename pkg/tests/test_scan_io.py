import struct

import numpy as np
import pytest

from descatter import scan_io
from descatter.errors import MalformedLength, NonFiniteValue, NotFound, \
    UnknownClassId
from descatter.scan_io import LabelMask, PointCloud


def test_read_empty_scan(tmp_path):
    p = tmp_path / "empty.bin"
    p.write_bytes(b"")
    cloud = scan_io.read_scan(p)
    assert len(cloud) == 0


def test_read_hand_encoded_point(tmp_path):
    p = tmp_path / "one.bin"
    p.write_bytes(struct.pack("<4f", 1.0, 2.0, 3.0, 0.5))
    cloud = scan_io.read_scan(p)
    assert len(cloud) == 1
    np.testing.assert_array_equal(cloud.xyz[0], [1.0, 2.0, 3.0])
    assert cloud.intensity[0] == 0.5


def test_read_scan_bad_length(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"\x00" * 17)
    with pytest.raises(MalformedLength):
        scan_io.read_scan(p)


def test_read_scan_missing():
    with pytest.raises(NotFound):
        scan_io.read_scan("/nonexistent/scan.bin")


def test_read_scan_rejects_nan(tmp_path):
    p = tmp_path / "nan.bin"
    p.write_bytes(struct.pack("<4f", float("nan"), 0, 0, 0))
    with pytest.raises(NonFiniteValue):
        scan_io.read_scan(p)


def test_scan_roundtrip_sizes(tmp_path):
    for n in (0, 2):
        cloud = PointCloud(xyz=np.zeros((n, 3)), intensity=np.zeros(n))
        p = tmp_path / f"n{n}.bin"
        scan_io.write_scan(cloud, p)
        assert p.stat().st_size == 16 * n


def test_scan_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    for trial in range(20):
        n = int(rng.integers(0, 200))
        cloud = PointCloud(
            xyz=rng.uniform(-80, 80, size=(n, 3)).astype(np.float32),
            intensity=rng.random(n).astype(np.float32))
        p = tmp_path / f"t{trial}.bin"
        scan_io.write_scan(cloud, p)
        back = scan_io.read_scan(p)
        np.testing.assert_array_equal(back.xyz, cloud.xyz)
        np.testing.assert_array_equal(back.intensity, cloud.intensity)


def test_labels_roundtrip(tmp_path):
    p = tmp_path / "a.label"
    scan_io.write_labels(LabelMask(np.array([0, 1, 1, 0])), p)
    assert p.stat().st_size == 16
    back = scan_io.read_labels(p)
    np.testing.assert_array_equal(back.labels, [0, 1, 1, 0])


def test_labels_hand_encoded(tmp_path):
    p = tmp_path / "b.label"
    p.write_bytes(struct.pack("<I", 1))
    assert scan_io.read_labels(p).labels.tolist() == [1]


def test_labels_bad_length(tmp_path):
    p = tmp_path / "c.label"
    p.write_bytes(b"\x00" * 6)
    with pytest.raises(MalformedLength):
        scan_io.read_labels(p)


def test_labels_unknown_class(tmp_path):
    p = tmp_path / "d.label"
    p.write_bytes(struct.pack("<I", 7))
    with pytest.raises(UnknownClassId):
        scan_io.read_labels(p)
    remapped = scan_io.read_labels(p, remap={7: 1, 0: 0})
    assert remapped.labels.tolist() == [1]


def test_labels_random_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    for trial in range(10):
        labels = LabelMask(rng.integers(0, 2, size=rng.integers(0, 500)))
        p = tmp_path / f"r{trial}.label"
        scan_io.write_labels(labels, p)
        np.testing.assert_array_equal(scan_io.read_labels(p).labels,
                                      labels.labels)
