"""Two-branch denoising network over ordered point-cloud pairs.

The spatial branch applies a learned linear map over the k range-nearest
neighbors of every pixel (gathered in metric space, not on the pixel grid);
the temporal branch does the same over anchor-minus-neighbor motion vectors
against the previous scan, re-encoded as (magnitude, direction) spherical
triples. Both branches are encoded by residual blocks, fused by
motion-guided attention, decoded through a pixel shuffle and classified per
pixel into {valid, noise}.

Ablation hooks reproduce the reduced variants: ``front="conv2d"`` swaps the
kNN front ends for plain 3x3 convolutions, ``temporal=False`` drops the
previous-scan branch and the attention fusion entirely.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load as ckpt_load
from .checkpoint import save as ckpt_save
from .errors import ConfigMismatch, ShapeMismatch
from .knn import KnnConfig, gather_channels, knn_spatial, knn_temporal, \
    motion_vectors, to_spherical
from .projection import OrderedPointCloud, unproject_labels
from .scan_io import CLASS_NOISE, LabelMask, PointCloud

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NetworkConfig:
    in_channels: int = 4          # (r,x,y,z); 5 adds intensity
    knn: KnnConfig = field(default_factory=KnnConfig)
    base_width: int = 32
    num_classes: int = 2
    downsample: int = 2
    dropout_p: float = 0.2
    front: str = "knn"            # "knn" or "conv2d"
    temporal: bool = True

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if self.base_width < 8:
            raise ValueError("base_width must be >= 8")
        if self.front not in ("knn", "conv2d"):
            raise ValueError(f"unknown front end {self.front!r}")

    def to_dict(self):
        return {
            "in_channels": self.in_channels,
            "knn_k": self.knn.k,
            "knn_xi": list(self.knn.xi),
            "base_width": self.base_width,
            "num_classes": self.num_classes,
            "downsample": self.downsample,
            "dropout_p": self.dropout_p,
            "front": self.front,
            "temporal": self.temporal,
        }

    @staticmethod
    def from_dict(d):
        return NetworkConfig(
            in_channels=int(d["in_channels"]),
            knn=KnnConfig(k=int(d["knn_k"]), xi=tuple(d["knn_xi"])),
            base_width=int(d["base_width"]),
            num_classes=int(d["num_classes"]),
            downsample=int(d["downsample"]),
            dropout_p=float(d["dropout_p"]),
            front=str(d["front"]),
            temporal=bool(d["temporal"]),
        )


class DenoiseNet:
    """Model state: named weight tensors, batch-norm running statistics and
    a train/eval flag. Construction is deterministic given the seed."""

    def __init__(self, config: NetworkConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self.stats: dict[str, np.ndarray] = {}
        self.training = True
        self.dropout_rng = np.random.default_rng(seed + 1)
        rng = np.random.default_rng(seed)

        c = config
        w0 = c.base_width
        if c.front == "knn":
            self._linear(rng, "front_s", c.knn.k * c.in_channels, w0)
            if c.temporal:
                self._linear(rng, "front_t", c.knn.k * 3, w0)
        else:
            self._conv(rng, "front_s", w0, c.in_channels, 3)
            self._bias(rng, "front_s", w0)
            if c.temporal:
                self._conv(rng, "front_t", w0, c.in_channels, 3)
                self._bias(rng, "front_t", w0)
        self._res_block(rng, "enc_s", w0, 2 * w0)
        if c.temporal:
            self._res_block(rng, "enc_t", w0, 2 * w0)
            self._conv(rng, "mga", 2 * w0, 2 * w0, 1)
            self._bias(rng, "mga", 2 * w0)
        self._res_block(rng, "mid", 2 * w0, 4 * w0)
        r = c.downsample
        self._conv(rng, "up", 2 * w0 * r * r, 4 * w0, 1)
        self._bias(rng, "up", 2 * w0 * r * r)
        self._res_block(rng, "dec", 2 * w0 + w0, 2 * w0)
        self._conv(rng, "head", c.num_classes, 2 * w0, 1)
        self._bias(rng, "head", c.num_classes)

        log.info("model built: %d parameters", self.parameter_count())

    # --- weight construction -------------------------------------------

    def _add(self, name, data):
        self.params[name] = Tensor(data, requires_grad=True)

    def _linear(self, rng, name, n_in, n_out):
        std = np.sqrt(2.0 / n_in)
        self._add(f"{name}.w", rng.normal(0.0, std, (n_out, n_in)))
        self._add(f"{name}.b", np.zeros(n_out))

    def _conv(self, rng, name, n_out, n_in, ksize):
        std = np.sqrt(2.0 / (n_in * ksize * ksize))
        self._add(f"{name}.w",
                  rng.normal(0.0, std, (n_out, n_in, ksize, ksize)))

    def _bias(self, rng, name, n_out):
        self._add(f"{name}.b", np.zeros(n_out))

    def _bn(self, rng, name, width):
        self._add(f"{name}.g", np.ones(width))
        self._add(f"{name}.b", np.zeros(width))
        self.stats[f"{name}.rm"] = np.zeros(width)
        self.stats[f"{name}.rv"] = np.ones(width)

    def _res_block(self, rng, name, n_in, n_out):
        self._conv(rng, f"{name}.conv1", n_out, n_in, 1)
        self._bn(rng, f"{name}.bn1", n_out)
        self._conv(rng, f"{name}.conv2", n_out, n_in, 3)
        self._bn(rng, f"{name}.bn2", n_out)
        self._conv(rng, f"{name}.conv3", n_out, n_in, 3)  # dilation 2
        self._bn(rng, f"{name}.bn3", n_out)
        self._conv(rng, f"{name}.reduce", n_out, 3 * n_out, 1)
        self._bias(rng, f"{name}.reduce", n_out)
        self._conv(rng, f"{name}.skip", n_out, n_in, 1)
        self._bias(rng, f"{name}.skip", n_out)

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    # --- mode / dtype ----------------------------------------------------

    def train(self, mode=True):
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    def to_dtype(self, dtype):
        for p in self.params.values():
            p.data = p.data.astype(dtype)
        return self

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    # --- layer applications ----------------------------------------------

    def _apply_linear(self, name, feats):
        """feats: plain [n_in, H*W] array treated as a graph constant."""
        out = ad.matmul(self.params[f"{name}.w"], Tensor(feats))
        return ad.relu(ad.add_bias(out, self.params[f"{name}.b"]))

    def spatial_knn_conv(self, opc, nim):
        c = self.config
        feats = gather_channels(opc.channels[:c.in_channels], nim)
        k, ci, H, W = feats.shape
        h = self._apply_linear("front_s", feats.reshape(k * ci, H * W))
        return ad.reshape(h, (c.base_width, H, W))

    def temporal_knn_conv(self, opc_t, opc_prev, nim):
        d = to_spherical(motion_vectors(opc_t, opc_prev, nim))
        k, three, H, W = d.shape
        h = self._apply_linear("front_t", d.reshape(k * three, H * W))
        return ad.reshape(h, (self.config.base_width, H, W))

    def _front_conv(self, name, channels):
        x = Tensor(np.ascontiguousarray(channels[:self.config.in_channels]))
        h = ad.conv2d(x, self.params[f"{name}.w"], padding="same")
        return ad.relu(ad.add_bias(h, self.params[f"{name}.b"]))

    def _bn_relu(self, name, x):
        y = ad.batch_norm(x, self.params[f"{name}.g"],
                          self.params[f"{name}.b"],
                          self.stats[f"{name}.rm"],
                          self.stats[f"{name}.rv"], self.training)
        return ad.relu(y)

    def res_block(self, name, x, pool=False):
        p1 = self._bn_relu(f"{name}.bn1",
                           ad.conv2d(x, self.params[f"{name}.conv1.w"]))
        p2 = self._bn_relu(f"{name}.bn2",
                           ad.conv2d(x, self.params[f"{name}.conv2.w"],
                                     padding="same"))
        p3 = self._bn_relu(f"{name}.bn3",
                           ad.conv2d(x, self.params[f"{name}.conv3.w"],
                                     dilation=2, padding="same"))
        merged = ad.add_bias(
            ad.conv2d(ad.concat([p1, p2, p3], axis=0),
                      self.params[f"{name}.reduce.w"]),
            self.params[f"{name}.reduce.b"])
        merged = ad.spatial_dropout(merged, self.config.dropout_p,
                                    self.dropout_rng, self.training)
        skip = ad.add_bias(ad.conv2d(x, self.params[f"{name}.skip.w"]),
                           self.params[f"{name}.skip.b"])
        out = ad.add(merged, skip)
        if pool:
            out = ad.avg_pool2d(out, self.config.downsample)
        return out

    def mga_fuse(self, spatial, temporal):
        att = ad.sigmoid(ad.add_bias(
            ad.conv2d(temporal, self.params["mga.w"]),
            self.params["mga.b"]))
        return ad.add(ad.mul(spatial, att), spatial)

    # --- full pipeline -----------------------------------------------------

    def forward(self, opc_t: OrderedPointCloud,
                opc_prev: OrderedPointCloud | None = None) -> Tensor:
        """Class probabilities [num_classes, H, W] (softmax over classes)."""
        c = self.config
        if c.temporal:
            if opc_prev is None:
                raise ConfigMismatch("temporal model needs a previous scan")
            if opc_prev.channels.shape[1:] != opc_t.channels.shape[1:]:
                raise ShapeMismatch("scan pair has mismatched image sizes")
        if opc_t.channels.shape[0] < c.in_channels:
            raise ConfigMismatch(
                f"model wants {c.in_channels} input channels, projection "
                f"provides {opc_t.channels.shape[0]}")

        if c.front == "knn":
            nim_s = knn_spatial(opc_t, c.knn)
            feat_s = self.spatial_knn_conv(opc_t, nim_s)
            if c.temporal:
                nim_t = knn_temporal(opc_t, opc_prev, c.knn)
                feat_t = self.temporal_knn_conv(opc_t, opc_prev, nim_t)
        else:
            feat_s = self._front_conv("front_s", opc_t.channels)
            if c.temporal:
                feat_t = self._front_conv("front_t", opc_prev.channels)

        enc_s = self.res_block("enc_s", feat_s, pool=True)
        if c.temporal:
            enc_t = self.res_block("enc_t", feat_t, pool=True)
            fused = self.mga_fuse(enc_s, enc_t)
        else:
            fused = enc_s

        mid = self.res_block("mid", fused)
        up = ad.add_bias(ad.conv2d(mid, self.params["up.w"]),
                         self.params["up.b"])
        up = ad.pixel_shuffle(up, self.config.downsample)
        dec = self.res_block("dec", ad.concat([up, feat_s], axis=0))
        logits = ad.add_bias(ad.conv2d(dec, self.params["head.w"]),
                             self.params["head.b"])
        return ad.softmax(logits, axis=0)

    def mask_points(self, cloud: PointCloud, opc: OrderedPointCloud,
                    probs) -> tuple[PointCloud, PointCloud, LabelMask]:
        """Split the cloud by per-pixel argmax class: (clean, removed,
        per-point mask). clean and removed partition the input exactly."""
        data = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
        pred = np.argmax(data, axis=0)
        mask = unproject_labels(opc, pred, fill=CLASS_NOISE)
        noisy = mask.labels == CLASS_NOISE
        inten = cloud.intensity
        clean = PointCloud(xyz=cloud.xyz[~noisy],
                           intensity=None if inten is None
                           else inten[~noisy],
                           frame_id=cloud.frame_id)
        removed = PointCloud(xyz=cloud.xyz[noisy],
                             intensity=None if inten is None
                             else inten[noisy],
                             frame_id=cloud.frame_id)
        return clean, removed, mask

    # --- persistence --------------------------------------------------------

    def save(self, path):
        tensors = {n: p.data for n, p in self.params.items()}
        tensors.update({f"stats.{n}": v for n, v in self.stats.items()})
        ckpt_save(path, tensors, meta={"network": self.config.to_dict()})

    @staticmethod
    def load(path, dtype=np.float64) -> "DenoiseNet":
        tensors, meta = ckpt_load(path)
        net = DenoiseNet(NetworkConfig.from_dict(meta["network"]))
        for n in net.params:
            net.params[n].data = tensors[n].astype(dtype)
        for n in net.stats:
            net.stats[n][...] = tensors[f"stats.{n}"].astype(np.float64)
        return net.eval()
