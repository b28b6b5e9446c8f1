"""Integrated positional encoding over conical pixel frustums.

A pixel ray is widened into a cone; a depth slice [t0, t1] of that cone
is summarized by a Gaussian (mean on the ray, separate along-ray and
perpendicular variances). Sine/cosine features are then closed-form
expectations under that Gaussian: E[sin(2^l x)] = sin(2^l mu) *
exp(-0.5 * 4^l * var), attenuating octaves the frustum cannot resolve.

The encoding core accepts either numpy arrays or tape variables so the
same code serves plain evaluation and gradient-based training. A
Monte-Carlo estimator over the exact frustum volume acts as the
reference the Gaussian approximation is tested against.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class ConicalFrustum:
    origin: np.ndarray
    direction: np.ndarray
    pixel_radius: float      # world units of radius growth per unit depth
    t0: float
    t1: float

    def __post_init__(self):
        object.__setattr__(self, "origin",
                           np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "direction",
                           np.asarray(self.direction, dtype=float))
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-9:
            raise ValueError("direction must be a unit vector")
        if not 0.0 < self.t0 < self.t1:
            raise ValueError("need 0 < t0 < t1")
        if self.pixel_radius <= 0.0:
            raise ValueError("pixel_radius must be positive")


@dataclass(frozen=True)
class GaussianRegion:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "covariance",
                           np.asarray(self.covariance, dtype=float))
        if self.covariance.shape != (3, 3):
            raise ValueError("covariance must be 3x3")
        if np.max(np.abs(self.covariance - self.covariance.T)) > 1e-12:
            raise ValueError("covariance must be symmetric")
        if np.min(np.linalg.eigvalsh(self.covariance)) < -1e-12:
            raise ValueError("covariance must be PSD")


@dataclass(frozen=True)
class EncodingConfig:
    L: int
    anneal_t: float = 0.0
    anneal_b: float = 1.0

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("need at least one octave")
        if self.anneal_b <= 0.0:
            raise ValueError("anneal_b must be positive")
        if self.anneal_t < 0.0:
            raise ValueError("anneal_t must be >= 0")


def pixel_radius_for(fx):
    """Cone radius growth per unit depth for a camera with focal fx.

    2/sqrt(12) of the pixel footprint width at unit depth, which
    matches the variance of a unit square pixel.
    """
    return (2.0 / math.sqrt(12.0)) / fx


def cast_frustum(pixel, pose, t0, t1):
    """Conical frustum through a pixel center, depths [t0, t1]."""
    u, v = pixel
    d_cam = np.array([(u - pose.cx) / pose.fx, (v - pose.cy) / pose.fy, 1.0])
    d_world = pose.rotation.T @ d_cam
    d_world = d_world / np.linalg.norm(d_world)
    return ConicalFrustum(pose.center(), d_world, pixel_radius_for(pose.fx),
                          float(t0), float(t1))


def conical_moments(t0, t1, r_dot):
    """(mean depth, depth variance, radial variance) of a uniform cone slice.

    Parametrized around the midpoint depth for numerical stability when
    the slice is narrow. Vectorizes over arrays of t0, t1.
    """
    t_mu = (t0 + t1) / 2.0
    hw = (t1 - t0) / 2.0
    denom = 3.0 * t_mu ** 2 + hw ** 2
    t_mean = t_mu + 2.0 * t_mu * hw ** 2 / denom
    t_var = hw ** 2 / 3.0 - (4.0 / 15.0) * hw ** 4 * \
        (12.0 * t_mu ** 2 - hw ** 2) / denom ** 2
    r_var = r_dot ** 2 * (t_mu ** 2 / 4.0 + (5.0 / 12.0) * hw ** 2
                          - (4.0 / 15.0) * hw ** 4 / denom)
    return t_mean, t_var, r_var


def frustum_to_gaussian(f):
    t_mean, t_var, r_var = conical_moments(f.t0, f.t1, f.pixel_radius)
    d = f.direction
    mean = f.origin + t_mean * d
    outer = np.outer(d, d)
    cov = t_var * outer + r_var * (np.eye(3) - outer)
    cov = (cov + cov.T) / 2.0
    return GaussianRegion(mean, cov)


def encode_means_diag(mu, var_diag, L, weights=None):
    """Expected sin/cos features of N(mu, diag(var_diag)) per axis.

    mu, var_diag: (3,) or (3, M), numpy arrays or tape variables.
    Output stacks [sin_xyz, cos_xyz] per octave, lowest octave first,
    so the feature count is 6L. Optional per-octave weights scale both
    blocks of their octave.
    """
    blocks = []
    for l in range(L):
        s = float(2 ** l)
        arg = ad.mul(mu, s)
        att = ad.exp(ad.mul(var_diag, -0.5 * s * s))
        sin_b = ad.mul(ad.sin(arg), att)
        cos_b = ad.mul(ad.cos(arg), att)
        if weights is not None:
            sin_b = ad.mul(sin_b, float(weights[l]))
            cos_b = ad.mul(cos_b, float(weights[l]))
        blocks.append(sin_b)
        blocks.append(cos_b)
    return ad.vconcat(blocks)


def posenc(x, L, weights=None):
    """Plain sin/cos features of x, same layout and weighting as above."""
    blocks = []
    for l in range(L):
        arg = ad.mul(x, float(2 ** l))
        sin_b, cos_b = ad.sin(arg), ad.cos(arg)
        if weights is not None:
            sin_b = ad.mul(sin_b, float(weights[l]))
            cos_b = ad.mul(cos_b, float(weights[l]))
        blocks.append(sin_b)
        blocks.append(cos_b)
    return ad.vconcat(blocks)


def ipe_encode(gauss, L, weights=None):
    """Feature vector of length 6L for one Gaussian region."""
    var_diag = np.diag(gauss.covariance).copy()
    return encode_means_diag(gauss.mean, var_diag, L, weights)


def _perp_basis(d):
    axis = np.zeros(3)
    axis[np.argmin(np.abs(d))] = 1.0
    e1 = np.cross(d, axis)
    e1 = e1 / np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    return e1, e2


def ipe_monte_carlo(f, L, n_samples, seed):
    """Monte-Carlo reference for ipe_encode.

    Samples points uniformly inside the exact conical frustum (uniform
    depth and bounding disk, rejecting points outside the local cone
    radius) and averages the raw sin/cos features. Returns (features,
    standard errors), both length 6L. Counter-based bit generator, so
    sample k depends only on (seed, k).
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    gen = np.random.Generator(np.random.Philox(key=seed))
    t = gen.uniform(f.t0, f.t1, n_samples)
    r = f.pixel_radius * f.t1 * np.sqrt(gen.uniform(0.0, 1.0, n_samples))
    theta = gen.uniform(0.0, 2.0 * np.pi, n_samples)
    keep = r <= f.pixel_radius * t
    if not np.any(keep):
        raise RuntimeError("no samples accepted inside the frustum")
    t, r, theta = t[keep], r[keep], theta[keep]
    e1, e2 = _perp_basis(f.direction)
    pts = (f.origin[None, :] + t[:, None] * f.direction[None, :]
           + (r * np.cos(theta))[:, None] * e1[None, :]
           + (r * np.sin(theta))[:, None] * e2[None, :])
    n_acc = pts.shape[0]
    feats = np.empty((n_acc, 6 * L))
    for l in range(L):
        arg = (2 ** l) * pts
        feats[:, 6 * l:6 * l + 3] = np.sin(arg)
        feats[:, 6 * l + 3:6 * l + 6] = np.cos(arg)
    mean = feats.mean(axis=0)
    sem = feats.std(axis=0, ddof=1) / math.sqrt(n_acc)
    return mean, sem


def annealed_weight(k, cfg):
    """Per-octave attenuation e^{min((t-k)/b, 0)}; 1 once t reaches k."""
    return math.exp(min((cfg.anneal_t - k) / cfg.anneal_b, 0.0))


def octave_weights(cfg):
    return [annealed_weight(k, cfg) for k in range(cfg.L)]
