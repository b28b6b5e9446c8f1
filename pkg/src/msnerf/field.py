"""Tiny MLP radiance field and volume rendering over conical frustums.

The field is two tanh layers of width 64. The second activation doubles
as the latent code: a softplus head reads density from it, a sigmoid
head reads color from it together with the ray direction's sin/cos
features. Rendering partitions each ray into contiguous depth
intervals, encodes every interval's frustum Gaussian, queries the
field once for all samples, and composites front to back.

Everything in the render path goes through the autodiff ops, so camera
rotations, translations, and field weights may all be tape variables.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import blobio
from .configio import config_hash
from .ipe import (EncodingConfig, conical_moments, encode_means_diag,
                  octave_weights, pixel_radius_for, posenc)


@dataclass
class RadianceField:
    L: int              # position octaves; input width is 6L
    dir_octaves: int    # direction octaves; color input adds 3 + 6*dir_octaves
    hidden: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w_sigma: np.ndarray
    b_sigma: np.ndarray
    w_color: np.ndarray
    b_color: np.ndarray

    def arrays(self):
        return [("w1", self.w1), ("b1", self.b1),
                ("w2", self.w2), ("b2", self.b2),
                ("w_sigma", self.w_sigma), ("b_sigma", self.b_sigma),
                ("w_color", self.w_color), ("b_color", self.b_color)]

    def meta(self):
        return {"L": self.L, "dir_octaves": self.dir_octaves,
                "hidden": self.hidden}


def _field_shapes(L, dir_octaves, hidden):
    pos_in = 6 * L
    col_in = hidden + 3 + 6 * dir_octaves
    return [("w1", (hidden, pos_in)), ("b1", (hidden,)),
            ("w2", (hidden, hidden)), ("b2", (hidden,)),
            ("w_sigma", (1, hidden)), ("b_sigma", (1,)),
            ("w_color", (3, col_in)), ("b_color", (3,))]


def init_field(seed, L=4, dir_octaves=2, hidden=64):
    """Random 1/sqrt(fan-in) weights; density biased slightly transparent."""
    rng = np.random.default_rng(seed)
    arrs = {}
    for name, shape in _field_shapes(L, dir_octaves, hidden):
        if name.startswith("w"):
            arrs[name] = rng.normal(size=shape) / np.sqrt(shape[-1])
        else:
            arrs[name] = np.zeros(shape)
    arrs["b_sigma"] = np.array([-1.0])
    return RadianceField(L, dir_octaves, hidden, **arrs)


def make_constant_field(sigma, color, L=4, dir_octaves=2, hidden=64):
    """Field that outputs the same density and color everywhere.

    Zero weights make both activations vanish, so the heads read pure
    biases: b_sigma = softplus^-1(sigma), b_color = logit(color).
    """
    if sigma < 0.0:
        raise ValueError("density must be non-negative")
    arrs = {name: np.zeros(shape)
            for name, shape in _field_shapes(L, dir_octaves, hidden)}
    # softplus^-1; exact 0 maps to a deeply negative bias, and past ~30
    # the identity asymptote is exact to double precision
    if sigma == 0.0:
        b_sigma = -60.0
    elif sigma > 30.0:
        b_sigma = sigma
    else:
        b_sigma = math.log(math.expm1(sigma))
    arrs["b_sigma"] = np.array([b_sigma])
    c = np.clip(np.asarray(color, dtype=float), 1e-9, 1.0 - 1e-9)
    arrs["b_color"] = np.log(c / (1.0 - c))
    return RadianceField(L, dir_octaves, hidden, **arrs)


class _VarField:
    """RadianceField mirror whose arrays live on a tape."""

    def __init__(self, tape, f):
        self.L, self.dir_octaves, self.hidden = f.L, f.dir_octaves, f.hidden
        for name, arr in f.arrays():
            setattr(self, name, tape.var(arr))

    def arrays(self):
        return [(name, getattr(self, name))
                for name, _ in _field_shapes(self.L, self.dir_octaves,
                                             self.hidden)]


def field_query(field, feats, dir_feats):
    """Density (1, M) and color (3, M) for M encoded samples."""
    h1 = ad.tanh(ad.addcol(ad.matmul(field.w1, feats), field.b1))
    h2 = ad.tanh(ad.addcol(ad.matmul(field.w2, h1), field.b2))
    sigma = ad.softplus(ad.addcol(ad.matmul(field.w_sigma, h2),
                                  field.b_sigma))
    cin = ad.vconcat([h2, dir_feats])
    rgb = ad.sigmoid(ad.addcol(ad.matmul(field.w_color, cin), field.b_color))
    return sigma, rgb


# ---------------------------------------------------------------------------
# Sampling and rendering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RaySamplePlan:
    """Contiguous depth intervals: breaks[i] to breaks[i+1]."""

    breaks: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.breaks, dtype=float)
        if b.ndim != 1 or b.size < 2 or np.any(np.diff(b) <= 0.0):
            raise ValueError("breakpoints must be strictly increasing")
        object.__setattr__(self, "breaks", b)

    @property
    def n(self):
        return self.breaks.size - 1

    @property
    def t0s(self):
        return self.breaks[:-1]

    @property
    def t1s(self):
        return self.breaks[1:]


def stratified_intervals(near, far, n, jitter_seed=None):
    """Partition [near, far] into n intervals, optionally jittered.

    Interior breakpoints move within half a cell of their uniform
    position, which keeps the partition strictly increasing and leaves
    the endpoints exact.
    """
    if not (far > near > 0.0):
        raise ValueError("need far > near > 0")
    if n < 1:
        raise ValueError("need at least one interval")
    breaks = np.linspace(near, far, n + 1)
    if jitter_seed is not None and n > 1:
        rng = np.random.default_rng(np.random.SeedSequence(jitter_seed))
        w = (far - near) / n
        breaks[1:-1] += (rng.random(n - 1) - 0.5) * w
    return RaySamplePlan(breaks)


@dataclass(frozen=True)
class RenderConfig:
    near: float
    far: float
    n_samples: int = 16
    L: int = 4
    dir_octaves: int = 2
    anneal_t: float = None    # None: all octaves at weight 1
    anneal_b: float = 1.0
    jitter_seed: int = None

    def __post_init__(self):
        if not (self.far > self.near > 0.0):
            raise ValueError("need far > near > 0")
        if self.n_samples < 1:
            raise ValueError("need at least one sample interval")

    def plan(self):
        return stratified_intervals(self.near, self.far, self.n_samples,
                                    self.jitter_seed)

    def weights(self):
        """Per-octave attenuation, or None when every weight is 1."""
        if self.anneal_t is None or self.anneal_t >= self.L:
            return None
        cfg = EncodingConfig(self.L, anneal_t=self.anneal_t,
                             anneal_b=self.anneal_b)
        return octave_weights(cfg)


def render_rays_world(origin, directions, r_dot, field, cfg):
    """Composite n_samples intervals along R world-space unit rays.

    origin: (3,) camera center; directions: (3, R) unit columns; both
    may be tape variables (the pose-gradient path). Returns (rgb (3, R),
    interval weights (R, n)).
    """
    plan = cfg.plan()
    n = plan.n
    dirs_v = ad.value_of(directions)
    R = dirs_v.shape[1]
    t_mean, t_var, r_var = conical_moments(plan.t0s, plan.t1s, r_dot)

    rix = np.repeat(np.arange(R), n)
    Dg = ad.gather_cols(directions, rix)
    t_mu_flat = np.tile(t_mean, R)
    mu = ad.add(ad.mul(Dg, ad.tile_rows(t_mu_flat, 3)),
                ad.tile_cols(origin, R * n))
    d2 = ad.mul(Dg, Dg)
    var = ad.add(ad.mul(d2, ad.tile_rows(np.tile(t_var, R), 3)),
                 ad.mul(ad.sub(np.ones((3, R * n)), d2),
                        ad.tile_rows(np.tile(r_var, R), 3)))
    w_oct = cfg.weights()
    feats = encode_means_diag(mu, var, cfg.L, w_oct)
    dir_feats = ad.vconcat([Dg, posenc(Dg, cfg.dir_octaves)])
    sigma, rgb = field_query(field, feats, dir_feats)

    delta = np.tile(plan.t1s - plan.t0s, R)
    sd = ad.mul(ad.getrow(sigma, 0), delta)
    sd_rows = ad.reshape(sd, (R, n))
    trans = ad.exp(ad.neg(ad.cumsum_rows_exclusive(sd_rows)))
    alpha = ad.sub(np.ones((R, n)), ad.exp(ad.neg(sd_rows)))
    w = ad.mul(trans, alpha)

    # per-ray block sum: (3, R*n) weighted colors -> (3, R)
    seg = np.zeros((R * n, R))
    seg[np.arange(R * n), rix] = 1.0
    contrib = ad.mul(rgb, ad.tile_rows(ad.reshape(w, (R * n,)), 3))
    return ad.matmul(contrib, seg), w


def _pixel_rays(pixels, pose):
    """Unit camera-frame directions (3, R) for (u, v) pixel centers."""
    px = np.asarray(pixels, dtype=float).reshape(-1, 2)
    d = np.stack([(px[:, 0] - pose.cx) / pose.fx,
                  (px[:, 1] - pose.cy) / pose.fy,
                  np.ones(px.shape[0])])
    return d / np.linalg.norm(d, axis=0, keepdims=True)


def render_ray(pixel, pose, field, cfg):
    """One pixel: (rgb (3,), per-interval weights (n,))."""
    d_cam = _pixel_rays([pixel], pose)
    d_world = pose.rotation.T @ d_cam
    rgb, w = render_rays_world(pose.center(), d_world,
                               pixel_radius_for(pose.fx), field, cfg)
    return rgb[:, 0], w[0]


def render_image(pose, field, cfg, width, height):
    """(H, W, 3) image; pixel (x, y) is sampled at center (x+.5, y+.5)."""
    xs, ys = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
    pixels = np.stack([xs.ravel(), ys.ravel()], axis=1)
    d_cam = _pixel_rays(pixels, pose)
    d_world = pose.rotation.T @ d_cam
    rgb, _ = render_rays_world(pose.center(), d_world,
                               pixel_radius_for(pose.fx), field, cfg)
    return rgb.T.reshape(height, width, 3)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_field(field, bin_path):
    meta = field.meta()
    meta["config_hash"] = config_hash(field.meta())
    blobio.save_blob(bin_path, field.arrays(), meta)


def load_field(bin_path):
    meta, arrays = blobio.load_blob(bin_path)
    shapes = _field_shapes(meta["L"], meta["dir_octaves"], meta["hidden"])
    f = RadianceField(meta["L"], meta["dir_octaves"], meta["hidden"],
                      **{name: np.zeros(shape) for name, shape in shapes})
    blobio.fill_from_blob(f.arrays(), meta, arrays)
    return f
