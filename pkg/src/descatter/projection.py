"""Spherical projection between unordered clouds and H x W range images.

Image coordinates follow the usual range-image convention:

    u = floor(0.5 * (1 - atan2(y, x) / pi) * s_w)          clamped to [0, s_w)
    v = floor((1 - (asin(z / r) + f_vup) / f_v) * s_h)      clamped to [0, s_h)

The two-argument arctangent is used for azimuth so the projection spans the
full image width. Channel order is (range, x, y, z[, intensity]); invalid
pixels hold range = -1 and zeros elsewhere. Every input point keeps a
back-pointer to its pixel so per-pixel predictions can be pushed back to
points; when several points collide in one pixel the nearest one (lowest
point index on ties) provides the channel values.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeMismatch, ZeroRange
from .scan_io import LabelMask, PointCloud

SENTINEL_RANGE = -1.0


@dataclass(frozen=True)
class SensorConfig:
    s_h: int = 64
    s_w: int = 512
    f_v: float = np.deg2rad(30.0)       # total vertical field of view
    f_vup: float = np.deg2rad(15.0)     # part of it above the horizon

    def __post_init__(self):
        if self.s_h < 1 or self.s_w < 1:
            raise ValueError("image dimensions must be >= 1")
        if not (self.f_v > 0 and 0 <= self.f_vup <= self.f_v):
            raise ValueError("need f_v > 0 and 0 <= f_vup <= f_v")

    @property
    def azimuth_resolution(self) -> float:
        return 2.0 * np.pi / self.s_w


# named sensor presets: the toy desk-scale default plus the two sensors the
# network is meant to bridge (0.44 deg vs 1.25 deg vertical resolution)
PRESETS = {
    "toy64": SensorConfig(64, 512, np.deg2rad(30.0), np.deg2rad(15.0)),
    "dense64": SensorConfig(64, 2048, np.deg2rad(0.44 * 64),
                            np.deg2rad(0.44 * 32)),
    "sparse32": SensorConfig(32, 1024, np.deg2rad(1.25 * 32),
                             np.deg2rad(1.25 * 16)),
}


@dataclass
class OrderedPointCloud:
    channels: np.ndarray      # [C,H,W] float64, C = (r,x,y,z[,i])
    valid: np.ndarray         # [H,W] bool
    point_pixel: np.ndarray   # [n] int64 linear pixel per source point
    owner_start: np.ndarray   # [H*W+1] CSR offsets into owner_index
    owner_index: np.ndarray   # [n] point ids grouped by pixel
    winner: np.ndarray        # [H,W] int64 point id providing the channels
    cfg: SensorConfig
    has_intensity: bool
    dropped_zero_range: int = 0

    @property
    def range_image(self):
        return self.channels[0]

    @property
    def xyz_image(self):
        return self.channels[1:4]

    def owners_of(self, v: int, u: int) -> np.ndarray:
        lin = v * self.cfg.s_w + u
        return self.owner_index[self.owner_start[lin]:
                                self.owner_start[lin + 1]]

    def num_points(self) -> int:
        return self.point_pixel.shape[0]


def pixel_of(point, cfg: SensorConfig):
    """Image coordinates (u, v) of a single point. Raises ZeroRange at the
    origin."""
    x, y, z = float(point[0]), float(point[1]), float(point[2])
    r = np.sqrt(x * x + y * y + z * z)
    if r == 0.0:
        raise ZeroRange("cannot project a zero-range point")
    u = int(np.floor(0.5 * (1.0 - np.arctan2(y, x) / np.pi) * cfg.s_w))
    v = int(np.floor((1.0 - (np.arcsin(z / r) + cfg.f_vup) / cfg.f_v)
                     * cfg.s_h))
    u = min(max(u, 0), cfg.s_w - 1)
    v = min(max(v, 0), cfg.s_h - 1)
    return u, v


def pixels_of(xyz: np.ndarray, cfg: SensorConfig):
    """Vectorized pixel_of for an [n,3] float array with positive ranges."""
    xyz = np.asarray(xyz, dtype=np.float64)
    r = np.linalg.norm(xyz, axis=1)
    u = np.floor(0.5 * (1.0 - np.arctan2(xyz[:, 1], xyz[:, 0]) / np.pi)
                 * cfg.s_w).astype(np.int64)
    v = np.floor((1.0 - (np.arcsin(xyz[:, 2] / r) + cfg.f_vup) / cfg.f_v)
                 * cfg.s_h).astype(np.int64)
    np.clip(u, 0, cfg.s_w - 1, out=u)
    np.clip(v, 0, cfg.s_h - 1, out=v)
    return u, v, r


def project(cloud: PointCloud, cfg: SensorConfig) -> OrderedPointCloud:
    """Build the ordered point cloud. Zero-range points are dropped (their
    count is recorded); every surviving point index appears in exactly one
    pixel's owner list."""
    n = len(cloud)
    has_i = cloud.intensity is not None
    C = 5 if has_i else 4
    H, W = cfg.s_h, cfg.s_w

    xyz = cloud.xyz.astype(np.float64)
    rng_all = np.linalg.norm(xyz, axis=1)
    keep = rng_all > 0.0
    dropped = int(n - keep.sum())

    channels = np.zeros((C, H, W), np.float64)
    channels[0].fill(SENTINEL_RANGE)
    valid = np.zeros((H, W), np.bool_)
    point_pixel = np.full(n, -1, np.int64)
    winner = np.full((H, W), -1, np.int64)

    idx = np.nonzero(keep)[0]
    if idx.size:
        u, v, r = pixels_of(xyz[keep], cfg)
        lin = v * W + u
        point_pixel[idx] = lin
        win_flat = kernels.scatter_nearest(lin, r, H * W)
        # scatter_nearest indexes the kept subset; map back to point ids
        hit = win_flat >= 0
        winner_flat = np.full(H * W, -1, np.int64)
        winner_flat[hit] = idx[win_flat[hit]]
        winner = winner_flat.reshape(H, W)
        valid = winner >= 0
        wsel = winner[valid]
        channels[0][valid] = rng_all[wsel]
        channels[1][valid] = xyz[wsel, 0]
        channels[2][valid] = xyz[wsel, 1]
        channels[3][valid] = xyz[wsel, 2]
        if has_i:
            channels[4][valid] = cloud.intensity.astype(np.float64)[wsel]

    # CSR owner lists over all points (dropped points get pixel -1 and are
    # grouped in front, then skipped via the offset table)
    order = np.argsort(point_pixel, kind="stable")
    sorted_pix = point_pixel[order]
    first_kept = np.searchsorted(sorted_pix, 0, side="left")
    owner_index = order[first_kept:]
    counts = np.bincount(sorted_pix[first_kept:], minlength=H * W)
    owner_start = np.zeros(H * W + 1, np.int64)
    np.cumsum(counts, out=owner_start[1:])

    return OrderedPointCloud(channels=channels, valid=valid,
                             point_pixel=point_pixel,
                             owner_start=owner_start,
                             owner_index=owner_index, winner=winner,
                             cfg=cfg, has_intensity=has_i,
                             dropped_zero_range=dropped)


def unproject_labels(opc: OrderedPointCloud, pixel_pred: np.ndarray,
                     fill: int = 0) -> LabelMask:
    """Push a per-pixel class map back onto the source points. Dropped
    (zero-range) points receive `fill`."""
    pixel_pred = np.asarray(pixel_pred)
    if pixel_pred.shape != (opc.cfg.s_h, opc.cfg.s_w):
        raise ShapeMismatch(
            f"prediction map {pixel_pred.shape} vs image "
            f"{(opc.cfg.s_h, opc.cfg.s_w)}")
    flat = pixel_pred.reshape(-1)
    labels = np.full(opc.num_points(), fill, np.uint32)
    kept = opc.point_pixel >= 0
    labels[kept] = flat[opc.point_pixel[kept]].astype(np.uint32)
    return LabelMask(labels=labels)
