"""Synthetic ground truth: constant-density spheres, multi-scale camera
rigs, and image metrics.

Spheres make every rendering claim checkable: a ray crossing constant
densities has a closed-form transmittance integral, evaluated here
event by event. Overlapping spheres superpose (densities add, emission
is the density-weighted color mix), matching the continuous volume
rendering limit.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from . import so3


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float
    density: float
    color: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        col = np.asarray(self.color, dtype=float)
        if c.shape != (3,) or col.shape != (3,):
            raise ValueError("center and color must be 3-vectors")
        if self.radius <= 0.0:
            raise ValueError("radius must be positive")
        if self.density < 0.0:
            raise ValueError("density must be non-negative")
        if np.any(col < 0.0) or np.any(col > 1.0):
            raise ValueError("color components must lie in [0,1]")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "color", col)


@dataclass(frozen=True)
class AnalyticScene:
    spheres: tuple

    def __post_init__(self):
        object.__setattr__(self, "spheres", tuple(self.spheres))


def _ray_events(scene, origin, direction):
    """Sorted density-change events (t, sigma_delta, color) along a ray."""
    events = []
    for s in scene.spheres:
        oc = origin - s.center
        b = float(direction @ oc)
        c0 = float(oc @ oc) - s.radius ** 2
        disc = b * b - c0
        if disc <= 0.0:
            continue
        root = math.sqrt(disc)
        t_in, t_out = -b - root, -b + root
        if t_out <= 0.0:
            continue
        events.append((max(t_in, 0.0), t_out, s.density, s.color))
    return events


def _integrate_ray(scene, origin, direction):
    segs = _ray_events(scene, origin, direction)
    if not segs:
        return np.zeros(3)
    cuts = sorted({t for t0, t1, _, _ in segs for t in (t0, t1)})
    color = np.zeros(3)
    trans = 1.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        mid = (a + b) / 2.0
        sigma = 0.0
        emit = np.zeros(3)
        for t0, t1, dens, col in segs:
            if t0 < mid < t1:
                sigma += dens
                emit = emit + dens * col
        if sigma <= 0.0:
            continue
        absorbed = 1.0 - math.exp(-sigma * (b - a))
        color = color + trans * absorbed * (emit / sigma)
        trans *= 1.0 - absorbed
    return color


def analytic_render(scene, pose, resolution, supersample=2):
    """Exact (H, W, 3) render, box-averaged over supersample^2 subrays.

    Averaging within the pixel footprint keeps renders consistent
    across scales: a scale-s render approximates the same pixel-area
    integral that box-downsampling a finer render does.
    """
    width, height = resolution
    ss = int(supersample)
    img = np.zeros((height, width, 3))
    origin = pose.center()
    offsets = (np.arange(ss) + 0.5) / ss
    for y in range(height):
        for x in range(width):
            acc = np.zeros(3)
            for oy in offsets:
                for ox in offsets:
                    d_cam = np.array([(x + ox - pose.cx) / pose.fx,
                                      (y + oy - pose.cy) / pose.fy, 1.0])
                    d = pose.rotation.T @ d_cam
                    d /= np.linalg.norm(d)
                    acc += _integrate_ray(scene, origin, d)
            img[y, x] = acc / (ss * ss)
    return img


def render_reference_images(scene, rig, supersample=2):
    """images[cam][scale_idx] ground-truth renders for a whole rig."""
    return [[analytic_render(scene, rig.pose(cam, s), rig.resolution(s),
                             supersample)
             for s in rig.scales]
            for cam in range(rig.n_cams)]


def demo_scene():
    """Three colored spheres around the origin on a black background."""
    return AnalyticScene((
        Sphere(np.array([0.0, 0.0, 0.0]), 0.55, 3.0, np.array([0.85, 0.25, 0.2])),
        Sphere(np.array([0.7, 0.35, 0.2]), 0.3, 4.0, np.array([0.2, 0.7, 0.3])),
        Sphere(np.array([-0.55, -0.3, -0.25]), 0.35, 2.5, np.array([0.25, 0.35, 0.9])),
    ))


def cluster_scene():
    """Seven small dense spheres spread over all three axes.

    Densities are high enough that silhouettes are crisp at toy
    resolutions, so renders actually punish camera misalignment; the
    smooth demo_scene barely does.
    """
    return AnalyticScene((
        Sphere(np.array([0.0, 0.0, 0.0]), 0.50, 12.0, np.array([0.90, 0.20, 0.15])),
        Sphere(np.array([0.9, 0.3, -0.2]), 0.36, 10.0, np.array([0.15, 0.80, 0.30])),
        Sphere(np.array([-0.8, -0.25, 0.3]), 0.33, 14.0, np.array([0.20, 0.35, 0.90])),
        Sphere(np.array([0.25, -0.85, -0.1]), 0.30, 11.0, np.array([0.95, 0.85, 0.20])),
        Sphere(np.array([-0.3, 0.8, 0.15]), 0.32, 9.0, np.array([0.85, 0.30, 0.85])),
        Sphere(np.array([0.1, 0.35, 0.85]), 0.28, 13.0, np.array([0.20, 0.90, 0.85])),
        Sphere(np.array([-0.15, -0.3, -0.8]), 0.31, 10.0, np.array([0.95, 0.55, 0.25])),
    ))


# ---------------------------------------------------------------------------
# Multi-scale rigs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MultiScaleRig:
    """Ring of look-at cameras plus intrinsics for each downsample scale."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    scales: tuple
    quats: tuple          # world-to-camera rotations
    translations: tuple

    @property
    def n_cams(self):
        return len(self.quats)

    def resolution(self, scale):
        if scale not in self.scales:
            raise ValueError(f"scale {scale} not in rig")
        if self.width % scale or self.height % scale:
            raise ValueError("resolution not divisible by scale")
        return self.width // scale, self.height // scale

    def pose(self, cam, scale=1):
        """CameraPose with intrinsics divided by the scale factor."""
        if scale not in self.scales:
            raise ValueError(f"scale {scale} not in rig")
        R = so3.quat_to_matrix(self.quats[cam])
        return so3.CameraPose(R, np.asarray(self.translations[cam]),
                              fx=self.fx / scale, fy=self.fy / scale,
                              cx=self.cx / scale, cy=self.cy / scale)

    def with_quats(self, quats):
        return MultiScaleRig(self.width, self.height, self.fx, self.fy,
                             self.cx, self.cy, self.scales,
                             tuple(np.asarray(q, dtype=float) for q in quats),
                             self.translations)

    def take(self, n):
        """First n cameras, same intrinsics and scales."""
        if not 0 < n <= self.n_cams:
            raise ValueError("camera count out of range")
        return MultiScaleRig(self.width, self.height, self.fx, self.fy,
                             self.cx, self.cy, self.scales,
                             self.quats[:n], self.translations[:n])


def perturb_rig_rotations(rig, sigma, seed):
    """Left-compose N(0, sigma^2 I) tangent noise onto every camera."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 44)))
    quats = [so3.quat_normalize(so3.quat_mul(
        so3.exp_map(rng.normal(size=3) * sigma), q)) for q in rig.quats]
    return rig.with_quats(quats)


def _look_at(position, target):
    """World-to-camera rotation: +z optical axis toward the target."""
    fwd = np.asarray(target, dtype=float) - np.asarray(position, dtype=float)
    fwd = fwd / np.linalg.norm(fwd)
    up = np.array([0.0, 0.0, 1.0])
    if abs(fwd @ up) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(up, fwd)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd])


def build_rig(n_cams, radii, scales, seed, width=24, height=24, fx=None):
    """Look-at cameras on rings of the given radii around the origin.

    Radii cycle across cameras so viewing distance (and with it the
    footprint each pixel covers) genuinely varies; azimuths are evenly
    spaced with a small seeded jitter, heights jittered around a
    quarter of the radius.
    """
    if n_cams < 2:
        raise ValueError("need at least two cameras")
    radii = [float(r) for r in np.atleast_1d(radii)]
    if any(r <= 0 for r in radii):
        raise ValueError("radii must be positive")
    scales = tuple(int(s) for s in scales)
    if any(s < 1 for s in scales):
        raise ValueError("scales must be >= 1")
    if fx is None:
        fx = 1.2 * width
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 11)))
    quats, trans = [], []
    for k in range(n_cams):
        r = radii[k % len(radii)]
        theta = 2.0 * math.pi * k / n_cams + rng.normal() * 0.03
        z = 0.25 * r + rng.normal() * 0.05 * r
        p = np.array([r * math.cos(theta), r * math.sin(theta), z])
        R = _look_at(p, np.zeros(3))
        quats.append(so3.matrix_to_quat(R))
        trans.append(-R @ p)
    return MultiScaleRig(width, height, float(fx), float(fx),
                         width / 2.0, height / 2.0, scales,
                         tuple(quats), tuple(trans))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

PSNR_CAP = 99.0


def psnr(a, b):
    """10 log10(1/MSE) for [0,1] images; identical pairs report the cap."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse <= 10.0 ** (-PSNR_CAP / 10.0):
        return PSNR_CAP
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_kernel(win=11, sigma=1.5):
    r = win // 2
    x = np.arange(-r, r + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k /= k.sum()
    return np.outer(k, k)


def ssim(a, b, win=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean SSIM over valid windows, Gaussian-weighted, data range 1."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.shape[0] < win or a.shape[1] < win:
        raise ValueError(f"images smaller than the {win}x{win} window")
    kern = _gaussian_kernel(win, sigma)
    c1, c2 = k1 ** 2, k2 ** 2
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mx = convolve2d(x, kern, mode="valid")
        my = convolve2d(y, kern, mode="valid")
        mxx = convolve2d(x * x, kern, mode="valid") - mx * mx
        myy = convolve2d(y * y, kern, mode="valid") - my * my
        mxy = convolve2d(x * y, kern, mode="valid") - mx * my
        num = (2 * mx * my + c1) * (2 * mxy + c2)
        den = (mx * mx + my * my + c1) * (mxx + myy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def box_downsample(img, factor):
    """Average factor x factor blocks; dimensions must divide evenly."""
    img = np.asarray(img, dtype=float)
    h, w = img.shape[:2]
    if h % factor or w % factor:
        raise ValueError("image dimensions not divisible by factor")
    return img.reshape(h // factor, factor, w // factor, factor, -1) \
              .mean(axis=(1, 3)) \
              .reshape(h // factor, w // factor, *img.shape[2:])


# ---------------------------------------------------------------------------
# JSON wire formats
# ---------------------------------------------------------------------------

def scene_to_dict(scene):
    return {"spheres": [{"center": list(s.center), "radius": s.radius,
                         "density": s.density, "color": list(s.color)}
                        for s in scene.spheres]}


def scene_from_dict(data):
    return AnalyticScene(tuple(
        Sphere(np.array(d["center"], dtype=float), float(d["radius"]),
               float(d["density"]), np.array(d["color"], dtype=float))
        for d in data["spheres"]))


def rig_to_dict(rig):
    return {
        "width": rig.width, "height": rig.height,
        "fx": rig.fx, "fy": rig.fy, "cx": rig.cx, "cy": rig.cy,
        "scales": list(rig.scales),
        "cameras": [{"q": list(q), "t": list(t)}
                    for q, t in zip(rig.quats, rig.translations)],
    }


def rig_from_dict(data):
    return MultiScaleRig(
        int(data["width"]), int(data["height"]),
        float(data["fx"]), float(data["fy"]),
        float(data["cx"]), float(data["cy"]),
        tuple(int(s) for s in data["scales"]),
        tuple(np.array(c["q"], dtype=float) for c in data["cameras"]),
        tuple(np.array(c["t"], dtype=float) for c in data["cameras"]))


def save_json(obj, path):
    with open(Path(path), "w") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def load_json(path):
    with open(Path(path)) as fh:
        return json.load(fh)
