"""Parameter blobs: flat little-endian float64 + JSON sidecar.

The sidecar lists array names and shapes in file order plus whatever
extra metadata the caller wants (config hashes, architecture sizes).
"""

import json
from pathlib import Path

import numpy as np


def sidecar_path(bin_path):
    return Path(bin_path).with_suffix(".json")


def save_blob(bin_path, pairs, extra_meta=None):
    """pairs: ordered (name, array); extra_meta merged into the sidecar."""
    flat = np.concatenate([np.asarray(a, dtype=float).ravel()
                           for _, a in pairs])
    Path(bin_path).write_bytes(flat.astype("<f8").tobytes())
    meta = dict(extra_meta or {})
    meta["arrays"] = [{"name": n, "shape": list(np.asarray(a).shape)}
                      for n, a in pairs]
    with open(sidecar_path(bin_path), "w") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")


def load_blob(bin_path):
    """Returns (sidecar metadata, {name: array})."""
    with open(sidecar_path(bin_path)) as fh:
        meta = json.load(fh)
    flat = np.frombuffer(Path(bin_path).read_bytes(), dtype="<f8")
    arrays = {}
    pos = 0
    for desc in meta["arrays"]:
        shape = tuple(desc["shape"])
        size = int(np.prod(shape)) if shape else 1
        if pos + size > flat.size:
            raise ValueError("parameter file shorter than sidecar claims")
        arrays[desc["name"]] = flat[pos:pos + size].reshape(shape).astype(float)
        pos += size
    if pos != flat.size:
        raise ValueError("parameter file size does not match sidecar")
    return meta, arrays


def fill_from_blob(pairs, meta, arrays):
    """Copy loaded arrays into an existing layout, validating shape/order."""
    names = [d["name"] for d in meta["arrays"]]
    if [n for n, _ in pairs] != names:
        raise ValueError("sidecar layout does not match expected parameters")
    for name, arr in pairs:
        src = arrays[name]
        if src.shape != arr.shape:
            raise ValueError(f"shape mismatch for {name}")
        arr[...] = src
