"""Versioned checkpoint container: a JSON manifest followed by raw
little-endian float32 tensor payloads.

Layout:
    8 bytes   magic  b"DSCKPT01"
    8 bytes   uint64 LE manifest length L
    L bytes   UTF-8 JSON: {"version", "meta", "tensors":[{"name","shape"}]}
    payload   float32 LE data, concatenated in manifest order

`meta` is free-form (the network stores its configuration there so
checkpoints are self-describing). Values are stored at float32 precision,
so one save/load round trip quantizes float64 weights; further round trips
are exact.
"""

import json
import os

import numpy as np

from .errors import IoFailure

MAGIC = b"DSCKPT01"
VERSION = 1


def save(path, tensors: dict, meta: dict | None = None) -> None:
    names = list(tensors.keys())
    manifest = {
        "version": VERSION,
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(np.asarray(tensors[n]).shape)}
                    for n in names],
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.uint64(len(blob)).tobytes())
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(tensors[n],
                                         dtype="<f4").tobytes())


def load(path):
    """Returns (tensors: dict[str, float32 ndarray], meta: dict)."""
    try:
        with open(path, "rb") as f:
            magic = f.read(8)
            if magic != MAGIC:
                raise IoFailure(f"{path}: not a checkpoint (bad magic)")
            (hlen,) = np.frombuffer(f.read(8), dtype="<u8")
            manifest = json.loads(f.read(int(hlen)).decode("utf-8"))
            if manifest.get("version") != VERSION:
                raise IoFailure(
                    f"{path}: unsupported checkpoint version "
                    f"{manifest.get('version')}")
            tensors = {}
            for entry in manifest["tensors"]:
                shape = tuple(entry["shape"])
                count = int(np.prod(shape)) if shape else 1
                buf = f.read(4 * count)
                if len(buf) != 4 * count:
                    raise IoFailure(f"{path}: truncated payload")
                tensors[entry["name"]] = np.frombuffer(
                    buf, dtype="<f4").reshape(shape).copy()
    except OSError as e:
        raise IoFailure(str(e)) from e
    return tensors, manifest["meta"]
