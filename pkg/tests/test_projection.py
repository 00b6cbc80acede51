import numpy as np
import pytest

import oracles
from descatter import projection
from descatter.errors import ZeroRange
from descatter.projection import SensorConfig, pixel_of, pixels_of, \
    project, unproject_labels
from descatter.scan_io import PointCloud

CFG64 = SensorConfig(s_h=64, s_w=64, f_v=np.deg2rad(30),
                     f_vup=np.deg2rad(15))


def random_cloud(rng, n, rmax=60.0):
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = rng.uniform(1.0, rmax, size=(n, 1))
    return PointCloud(xyz=(d * r).astype(np.float32),
                      intensity=rng.random(n).astype(np.float32))


def test_forward_axis_hits_center():
    u, v = pixel_of((10.0, 0.0, 0.0), CFG64)
    assert (u, v) == (32, 32)


def test_left_axis_quarter():
    u, _ = pixel_of((0.0, 10.0, 0.0), CFG64)
    assert u == 16


def test_zero_range_raises():
    with pytest.raises(ZeroRange):
        pixel_of((0.0, 0.0, 0.0), CFG64)


def test_pixel_of_matches_scalar_oracle():
    rng = np.random.default_rng(42)
    cloud = random_cloud(rng, 2000)
    cfg = SensorConfig()
    u, v, _ = pixels_of(cloud.xyz.astype(np.float64), cfg)
    for i in range(len(cloud)):
        x, y, z = (float(c) for c in cloud.xyz[i].astype(np.float64))
        uu, vv = oracles.pixel_of_scalar(x, y, z, cfg.s_h, cfg.s_w,
                                         cfg.f_v, cfg.f_vup)
        assert (u[i], v[i]) == (uu, vv)


def test_azimuth_scale_invariance():
    cfg = SensorConfig()
    rng = np.random.default_rng(3)
    for _ in range(100):
        p = rng.uniform(-5, 5, size=3)
        if np.linalg.norm(p) < 1e-3:
            continue
        u1, _ = pixel_of(p, cfg)
        for lam in (0.5, 2.0, 7.3):
            u2, _ = pixel_of(lam * p, cfg)
            assert u1 == u2


def test_project_single_point():
    cloud = PointCloud(xyz=np.array([[10.0, 0.0, 0.0]], np.float32),
                       intensity=np.array([0.25], np.float32))
    opc = project(cloud, CFG64)
    assert opc.valid.sum() == 1
    assert opc.valid[32, 32]
    np.testing.assert_allclose(opc.channels[:, 32, 32],
                               [10.0, 10.0, 0.0, 0.0, 0.25], rtol=1e-6)
    assert opc.range_image[0, 0] == projection.SENTINEL_RANGE


def test_collision_nearest_wins():
    # two points along the same ray at 5 m and 9 m share a pixel
    d = np.array([1.0, 0.2, -0.1])
    d /= np.linalg.norm(d)
    cloud = PointCloud(xyz=np.array([9.0 * d, 5.0 * d], np.float32))
    u0, v0 = pixel_of(cloud.xyz[0], CFG64)
    u1, v1 = pixel_of(cloud.xyz[1], CFG64)
    assert (u0, v0) == (u1, v1)
    opc = project(cloud, CFG64)
    assert opc.winner[v0, u0] == 1
    np.testing.assert_allclose(opc.range_image[v0, u0], 5.0, rtol=1e-6)
    assert sorted(opc.owners_of(v0, u0).tolist()) == [0, 1]


def test_every_point_owned_once():
    rng = np.random.default_rng(7)
    cloud = random_cloud(rng, 3000)
    opc = project(cloud, SensorConfig())
    assert sorted(opc.owner_index.tolist()) == list(range(3000))
    counts = opc.owner_start[1:] - opc.owner_start[:-1]
    assert counts.sum() == 3000


def test_range_channel_consistency():
    rng = np.random.default_rng(8)
    opc = project(random_cloud(rng, 4000), SensorConfig())
    v = opc.valid
    r = np.linalg.norm(np.stack([opc.channels[1][v], opc.channels[2][v],
                                 opc.channels[3][v]]), axis=0)
    np.testing.assert_allclose(opc.range_image[v], r, rtol=1e-5)


def test_stored_range_is_min_over_owners():
    rng = np.random.default_rng(9)
    cloud = random_cloud(rng, 5000, rmax=20.0)
    opc = project(cloud, CFG64)  # narrow image forces collisions
    ranges = cloud.ranges()
    H, W = CFG64.s_h, CFG64.s_w
    for lin in range(H * W):
        owners = opc.owner_index[opc.owner_start[lin]:
                                 opc.owner_start[lin + 1]]
        if len(owners) == 0:
            continue
        v, u = divmod(lin, W)
        assert opc.range_image[v, u] == ranges[owners].min()


def test_projected_pixels_are_subset_of_input():
    rng = np.random.default_rng(10)
    cloud = random_cloud(rng, 500)
    opc = project(cloud, SensorConfig())
    vs, us = np.nonzero(opc.valid)
    xyz = set(map(tuple, np.round(cloud.xyz.astype(np.float64), 6)))
    for v, u in zip(vs, us):
        p = tuple(np.round(opc.channels[1:4, v, u], 6))
        assert p in xyz


def test_zero_range_points_dropped_with_counter():
    cloud = PointCloud(xyz=np.array([[0, 0, 0], [5, 0, 0]], np.float32))
    opc = project(cloud, CFG64)
    assert opc.dropped_zero_range == 1
    assert opc.valid.sum() == 1


def test_unproject_uniform_map():
    rng = np.random.default_rng(11)
    cloud = random_cloud(rng, 800)
    opc = project(cloud, SensorConfig())
    for cls in (0, 1):
        mask = unproject_labels(opc, np.full((64, 512), cls, np.int64))
        assert (mask.labels == cls).all()


def test_unproject_collision_pixel():
    d = np.array([1.0, 0.2, -0.1])
    d /= np.linalg.norm(d)
    cloud = PointCloud(xyz=np.array([9.0 * d, 5.0 * d], np.float32))
    opc = project(cloud, CFG64)
    u, v = pixel_of(cloud.xyz[0], CFG64)
    pred = np.zeros((64, 64), np.int64)
    pred[v, u] = 1
    mask = unproject_labels(opc, pred)
    assert mask.labels.tolist() == [1, 1]


def test_unproject_matches_bruteforce_lookup():
    rng = np.random.default_rng(12)
    cloud = random_cloud(rng, 1500)
    cfg = SensorConfig()
    opc = project(cloud, cfg)
    pred = rng.integers(0, 2, size=(cfg.s_h, cfg.s_w))
    mask = unproject_labels(opc, pred)
    for i in range(len(cloud)):
        x, y, z = (float(c) for c in cloud.xyz[i].astype(np.float64))
        u, v = oracles.pixel_of_scalar(x, y, z, cfg.s_h, cfg.s_w,
                                       cfg.f_v, cfg.f_vup)
        assert mask.labels[i] == pred[v, u]
