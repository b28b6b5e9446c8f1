"""Image I/O: 8-bit RGB PNG for viewing, raw float64 for metrics.

Raw files are flat little-endian float64 with a JSON sidecar holding the
shape, so metric computations never round-trip through quantization.
"""

import json
from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(img):
    """[0,1] float image -> uint8 with round-half-away quantization."""
    arr = np.clip(np.asarray(img, dtype=float), 0.0, 1.0)
    return (arr * 255.0 + 0.5).astype(np.uint8)


def save_png(path, img):
    """Write an (H, W, 3) float image in [0,1] as 8-bit RGB PNG."""
    arr = to_uint8(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {arr.shape}")
    Image.fromarray(arr, mode="RGB").save(Path(path), format="PNG")


def load_png(path):
    """Read a PNG back to float64 in [0,1]."""
    with Image.open(Path(path)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=float)
    return arr / 255.0


def _raw_sidecar(path):
    return Path(path).with_suffix(Path(path).suffix + ".json")


def save_raw(path, img):
    """Write a float image as flat little-endian float64 + JSON sidecar."""
    arr = np.asarray(img, dtype=float)
    Path(path).write_bytes(arr.astype("<f8").tobytes())
    with open(_raw_sidecar(path), "w") as fh:
        json.dump({"shape": list(arr.shape), "dtype": "<f8"}, fh)
        fh.write("\n")


def load_raw(path):
    with open(_raw_sidecar(path)) as fh:
        meta = json.load(fh)
    if meta.get("dtype") != "<f8":
        raise ValueError(f"unsupported raw dtype {meta.get('dtype')!r}")
    flat = np.frombuffer(Path(path).read_bytes(), dtype="<f8")
    shape = tuple(meta["shape"])
    if flat.size != int(np.prod(shape)):
        raise ValueError("raw file size does not match sidecar shape")
    return flat.reshape(shape).astype(float)
