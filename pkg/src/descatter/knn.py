"""Windowed k-nearest-neighbor searches over range images.

Both searches compare candidate ranges inside a (2*xi_r+1) x (2*xi_c+1)
pixel window against the anchor pixel's range and keep the k smallest
absolute differences. The spatial search draws candidates from the anchor's
own image; the temporal search draws them from the previous scan while the
reference range stays in the current one. Neighbor order is deterministic:
ascending |difference| with ties broken by row-major candidate position,
and for the spatial search the anchor itself always occupies slot 0.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeMismatch
from .projection import OrderedPointCloud


@dataclass(frozen=True)
class KnnConfig:
    k: int = 5
    xi: tuple[int, int] = (2, 4)   # half-window (rows, cols)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.xi[0] < 0 or self.xi[1] < 0:
            raise ValueError("window half-extents must be >= 0")
        if self.k > self.window_size:
            raise ValueError(
                f"k={self.k} exceeds window of {self.window_size} pixels")

    @property
    def window_size(self) -> int:
        return (2 * self.xi[0] + 1) * (2 * self.xi[1] + 1)


@dataclass
class NeighborIndexMap:
    indices: np.ndarray       # [H,W,k] int64 linear pixel indices
    source_valid: np.ndarray  # [H,W] bool
    k: int
    temporal: bool

    def pixel_neighbors(self, v: int, u: int):
        """Neighbor (row, col) pairs for one anchor pixel."""
        W = self.source_valid.shape[1]
        lin = self.indices[v, u]
        return np.stack([lin // W, lin % W], axis=1)


def knn_spatial(opc: OrderedPointCloud, cfg: KnnConfig) -> NeighborIndexMap:
    idx, valid = kernels.window_argmink(
        opc.range_image, opc.valid, opc.range_image, opc.valid,
        cfg.k, cfg.xi[0], cfg.xi[1], anchor_self=True)
    return NeighborIndexMap(indices=idx, source_valid=valid, k=cfg.k,
                            temporal=False)


def knn_temporal(opc_t: OrderedPointCloud, opc_prev: OrderedPointCloud,
                 cfg: KnnConfig) -> NeighborIndexMap:
    if opc_t.range_image.shape != opc_prev.range_image.shape:
        raise ShapeMismatch(
            f"image shapes differ: {opc_t.range_image.shape} vs "
            f"{opc_prev.range_image.shape}")
    idx, valid = kernels.window_argmink(
        opc_prev.range_image, opc_prev.valid, opc_t.range_image, opc_t.valid,
        cfg.k, cfg.xi[0], cfg.xi[1], anchor_self=False)
    return NeighborIndexMap(indices=idx, source_valid=valid, k=cfg.k,
                            temporal=True)


def gather_channels(channels: np.ndarray, nim: NeighborIndexMap,
                    zero_invalid: bool = True) -> np.ndarray:
    """Gather per-neighbor channel vectors: [C,H,W] -> [k,C,H,W]."""
    C, H, W = channels.shape
    flat = channels.reshape(C, H * W)
    gathered = flat[:, nim.indices.reshape(-1)].reshape(C, H, W, nim.k)
    gathered = gathered.transpose(3, 0, 1, 2)
    if zero_invalid:
        gathered = gathered * nim.source_valid[None, None, :, :]
    return np.ascontiguousarray(gathered)


def motion_vectors(opc_t: OrderedPointCloud, opc_prev: OrderedPointCloud,
                   nim: NeighborIndexMap) -> np.ndarray:
    """Anchor-minus-neighbor displacement field d, shape [k,3,H,W].

    Rows with source_valid == False are zero. The anchor is the current
    scan's Cartesian pixel; neighbors come from the previous scan via the
    temporal index map."""
    anchors = opc_t.xyz_image                      # [3,H,W]
    neigh = gather_channels(opc_prev.xyz_image, nim, zero_invalid=False)
    d = anchors[None, :, :, :] - neigh             # [k,3,H,W]
    d = d * nim.source_valid[None, None, :, :]
    return d


def to_spherical(d: np.ndarray) -> np.ndarray:
    """(x,y,z) -> (r, theta, phi) with r = |d|, theta = arccos(z/r),
    phi = atan2(y,x); vectors with r < 1e-9 map to (0,0,0)."""
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    r = np.sqrt(x * x + y * y + z * z)
    ok = r >= 1e-9
    safe_r = np.where(ok, r, 1.0)
    theta = np.arccos(np.clip(z / safe_r, -1.0, 1.0))
    phi = np.arctan2(y, x)
    out = np.empty_like(d)
    out[:, 0] = np.where(ok, r, 0.0)
    out[:, 1] = np.where(ok, theta, 0.0)
    out[:, 2] = np.where(ok, phi, 0.0)
    return out


def from_spherical(s: np.ndarray) -> np.ndarray:
    """Inverse of to_spherical (used by tests as a round-trip oracle)."""
    r, theta, phi = s[:, 0], s[:, 1], s[:, 2]
    out = np.empty_like(s)
    out[:, 0] = r * np.sin(theta) * np.cos(phi)
    out[:, 1] = r * np.sin(theta) * np.sin(phi)
    out[:, 2] = r * np.cos(theta)
    return out
