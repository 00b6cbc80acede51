"""KITTI-style binary scan and label files.

Scans are flat little-endian float32 records (x, y, z, intensity), labels
one little-endian uint32 per point. The on-disk dataset layout mirrors the
KITTI odometry tree so real sequences drop in unchanged:

    <root>/sequences/<NN>/velodyne/<FFFFFF>.bin
    <root>/sequences/<NN>/labels/<FFFFFF>.label
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (MalformedLength, NonFiniteValue, NotFound,
                     UnknownClassId)

CLASS_VALID = 0
CLASS_NOISE = 1

SCAN_RECORD_BYTES = 16   # 4 x float32
LABEL_RECORD_BYTES = 4   # 1 x uint32


@dataclass
class PointCloud:
    """Unordered sensor-frame point cloud (meters)."""
    xyz: np.ndarray                    # [n,3] float32
    intensity: np.ndarray | None = None  # [n] float32 in [0,1]
    frame_id: int = 0

    def __post_init__(self):
        self.xyz = np.asarray(self.xyz, dtype=np.float32).reshape(-1, 3)
        if self.intensity is not None:
            self.intensity = np.asarray(self.intensity,
                                        dtype=np.float32).reshape(-1)

    def __len__(self):
        return self.xyz.shape[0]

    def ranges(self):
        return np.linalg.norm(self.xyz.astype(np.float64), axis=1)


@dataclass
class LabelMask:
    """Per-point class ids: 0 = valid, 1 = noise."""
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint32))

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint32).reshape(-1)

    def __len__(self):
        return self.labels.shape[0]

    def noise_mask(self):
        return self.labels == CLASS_NOISE


def read_scan(path) -> PointCloud:
    if not os.path.isfile(path):
        raise NotFound(f"scan not found: {path}")
    size = os.path.getsize(path)
    if size % SCAN_RECORD_BYTES != 0:
        raise MalformedLength(
            f"{path}: {size} bytes is not a multiple of "
            f"{SCAN_RECORD_BYTES}")
    raw = np.fromfile(path, dtype="<f4")
    if not np.all(np.isfinite(raw)):
        raise NonFiniteValue(f"{path}: scan contains NaN/Inf")
    pts = raw.reshape(-1, 4)
    return PointCloud(xyz=pts[:, :3].copy(), intensity=pts[:, 3].copy())


def write_scan(cloud: PointCloud, path) -> None:
    if not np.all(np.isfinite(cloud.xyz)):
        raise NonFiniteValue("refusing to write non-finite scan")
    n = len(cloud)
    rec = np.zeros((n, 4), dtype="<f4")
    rec[:, :3] = cloud.xyz
    if cloud.intensity is not None:
        rec[:, 3] = cloud.intensity
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    rec.tofile(path)


def read_labels(path, remap: dict | None = None) -> LabelMask:
    if not os.path.isfile(path):
        raise NotFound(f"label file not found: {path}")
    size = os.path.getsize(path)
    if size % LABEL_RECORD_BYTES != 0:
        raise MalformedLength(
            f"{path}: {size} bytes is not a multiple of "
            f"{LABEL_RECORD_BYTES}")
    raw = np.fromfile(path, dtype="<u4")
    if remap is not None:
        out = np.full_like(raw, 2)
        for src, dst in remap.items():
            out[raw == src] = dst
        bad = out > 1
        if np.any(bad):
            raise UnknownClassId(
                f"{path}: label value {int(raw[bad][0])} not in remap table")
        raw = out
    else:
        bad = raw > 1
        if np.any(bad):
            raise UnknownClassId(
                f"{path}: label value {int(raw[bad][0])} outside {{0,1}} "
                "(supply a remap table)")
    return LabelMask(labels=raw)


def write_labels(mask: LabelMask, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    mask.labels.astype("<u4").tofile(path)


def sequence_dir(root, seq: int) -> str:
    return os.path.join(root, "sequences", f"{seq:02d}")


def scan_path(root, seq: int, frame: int) -> str:
    return os.path.join(sequence_dir(root, seq), "velodyne",
                        f"{frame:06d}.bin")


def label_path(root, seq: int, frame: int) -> str:
    return os.path.join(sequence_dir(root, seq), "labels",
                        f"{frame:06d}.label")


def list_sequences(root) -> list[int]:
    base = os.path.join(root, "sequences")
    if not os.path.isdir(base):
        return []
    out = []
    for name in sorted(os.listdir(base)):
        if name.isdigit():
            out.append(int(name))
    return out


def list_frames(root, seq: int) -> list[int]:
    vdir = os.path.join(sequence_dir(root, seq), "velodyne")
    if not os.path.isdir(vdir):
        return []
    return sorted(int(f[:-4]) for f in os.listdir(vdir)
                  if f.endswith(".bin"))
