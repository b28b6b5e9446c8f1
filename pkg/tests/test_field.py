"""Radiance field, sampling plans, and volume rendering."""

import math

import numpy as np
import pytest

from msnerf import autodiff as ad
from msnerf.field import (RadianceField, RenderConfig, RaySamplePlan,
                          _VarField, field_query, init_field, load_field,
                          make_constant_field, render_image, render_ray,
                          render_rays_world, save_field, stratified_intervals)
from msnerf.ipe import pixel_radius_for, posenc
from msnerf.so3 import CameraPose


def _front_pose(fx=10.0, size=4):
    return CameraPose(np.eye(3), np.zeros(3), fx=fx, fy=fx,
                      cx=size / 2.0, cy=size / 2.0)


def _center_pixel(pose):
    return (pose.cx, pose.cy)


# ---------------------------------------------------------------------------
# Sampling plans
# ---------------------------------------------------------------------------

def test_single_interval_plan():
    plan = stratified_intervals(0.5, 3.5, 1)
    assert np.allclose(plan.breaks, [0.5, 3.5])
    assert plan.n == 1


def test_uniform_partition_breakpoints():
    plan = stratified_intervals(1.0, 3.0, 4)
    assert np.allclose(plan.breaks, [1.0, 1.5, 2.0, 2.5, 3.0])


def test_jittered_plan_contiguous_and_covering():
    for seed in range(5):
        plan = stratified_intervals(0.8, 6.0, 13, jitter_seed=seed)
        assert plan.breaks[0] == 0.8
        assert plan.breaks[-1] == 6.0
        assert np.all(np.diff(plan.breaks) > 0)
        assert plan.n == 13


def test_jitter_deterministic_per_seed():
    a = stratified_intervals(1.0, 2.0, 9, jitter_seed=7)
    b = stratified_intervals(1.0, 2.0, 9, jitter_seed=7)
    c = stratified_intervals(1.0, 2.0, 9, jitter_seed=8)
    assert np.array_equal(a.breaks, b.breaks)
    assert not np.array_equal(a.breaks, c.breaks)


def test_plan_rejects_bad_inputs():
    with pytest.raises(ValueError):
        stratified_intervals(2.0, 1.0, 4)
    with pytest.raises(ValueError):
        stratified_intervals(0.0, 1.0, 4)
    with pytest.raises(ValueError):
        stratified_intervals(1.0, 2.0, 0)
    with pytest.raises(ValueError):
        RaySamplePlan(np.array([1.0, 1.0, 2.0]))


# ---------------------------------------------------------------------------
# Field construction and queries
# ---------------------------------------------------------------------------

def test_constant_field_heads_exact():
    f = make_constant_field(2.5, (0.2, 0.5, 0.9))
    feats = np.zeros((6 * f.L, 3))
    dir_feats = np.zeros((3 + 6 * f.dir_octaves, 3))
    sigma, rgb = field_query(f, feats, dir_feats)
    assert np.allclose(sigma, 2.5, atol=1e-12)
    assert np.allclose(rgb, np.array([[0.2, 0.5, 0.9]]).T, atol=1e-9)


def test_field_query_ranges():
    f = init_field(3)
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(6 * f.L, 40))
    dir_feats = rng.normal(size=(3 + 6 * f.dir_octaves, 40))
    sigma, rgb = field_query(f, feats, dir_feats)
    assert sigma.shape == (1, 40) and rgb.shape == (3, 40)
    assert np.all(sigma >= 0.0)
    assert np.all((rgb > 0.0) & (rgb < 1.0))


def test_init_field_deterministic():
    a, b = init_field(11), init_field(11)
    for (_, x), (_, y) in zip(a.arrays(), b.arrays()):
        assert np.array_equal(x, y)


def test_save_load_roundtrip(tmp_path):
    f = init_field(4, L=3, dir_octaves=1, hidden=8)
    path = tmp_path / "field.bin"
    save_field(f, path)
    g = load_field(path)
    assert (g.L, g.dir_octaves, g.hidden) == (3, 1, 8)
    for (_, x), (_, y) in zip(f.arrays(), g.arrays()):
        assert np.array_equal(x, y)


# ---------------------------------------------------------------------------
# Rendering: analytic oracles
# ---------------------------------------------------------------------------

def test_constant_field_matches_transmittance_integral():
    """Constant sigma and color: compositing telescopes to the closed form."""
    sigma, color = 0.7, np.array([0.3, 0.6, 0.9])
    near, far, n = 1.0, 4.0, 16
    f = make_constant_field(sigma, color)
    cfg = RenderConfig(near=near, far=far, n_samples=n)
    pose = _front_pose()
    rgb, w = render_ray(_center_pixel(pose), pose, f, cfg)

    # independent route: explicit per-interval compositing
    breaks = np.linspace(near, far, n + 1)
    deltas = np.diff(breaks)
    trans = np.exp(-sigma * np.concatenate([[0.0], np.cumsum(deltas[:-1])]))
    alpha = 1.0 - np.exp(-sigma * deltas)
    expected_w = trans * alpha
    expected_rgb = expected_w.sum() * color

    assert np.allclose(w, expected_w, atol=1e-12)
    assert np.allclose(rgb, expected_rgb, atol=1e-9)
    # and the telescoped form from the total optical depth
    total = (1.0 - math.exp(-sigma * (far - near))) * color
    assert np.allclose(rgb, total, atol=1e-6)


def test_zero_density_renders_black():
    f = make_constant_field(0.0, (0.9, 0.4, 0.1))
    cfg = RenderConfig(near=0.5, far=5.0, n_samples=8)
    pose = _front_pose()
    rgb, w = render_ray(_center_pixel(pose), pose, f, cfg)
    assert np.allclose(rgb, 0.0, atol=1e-12)
    assert np.allclose(w, 0.0, atol=1e-12)


def test_opaque_front_limit():
    f = make_constant_field(2000.0, (0.25, 0.5, 0.75))
    cfg = RenderConfig(near=0.5, far=5.0, n_samples=8)
    pose = _front_pose()
    rgb, w = render_ray(_center_pixel(pose), pose, f, cfg)
    assert w[0] > 1.0 - 1e-9
    assert np.allclose(rgb, [0.25, 0.5, 0.75], atol=1e-6)


def test_weights_and_transmittance_invariants():
    pose = _front_pose(size=6)
    cfg = RenderConfig(near=0.6, far=6.0, n_samples=12)
    for seed in range(4):
        f = init_field(seed)
        # raise density so the invariants are exercised away from zero
        f.b_sigma[:] = 1.5
        d = np.stack([np.zeros(9), np.zeros(9), np.ones(9)])
        rng = np.random.default_rng(seed)
        d[:2] = rng.normal(scale=0.2, size=(2, 9))
        d /= np.linalg.norm(d, axis=0)
        rgb, w = render_rays_world(np.zeros(3), d, pixel_radius_for(pose.fx),
                                   f, cfg)
        assert np.all(w >= 0.0)
        assert np.all(w.sum(axis=1) <= 1.0 + 1e-9)
        # transmittance recovered from weights is monotone non-increasing
        trans = 1.0 - np.cumsum(w, axis=1)
        assert np.all(np.diff(trans, axis=1) <= 1e-12)
        assert np.all((rgb >= 0.0) & (rgb <= 1.0))


def test_render_image_equals_per_ray_calls():
    f = init_field(5)
    cfg = RenderConfig(near=0.8, far=4.0, n_samples=6)
    pose = _front_pose(fx=3.0, size=2)
    img = render_image(pose, f, cfg, 2, 2)
    for y in range(2):
        for x in range(2):
            rgb, _ = render_ray((x + 0.5, y + 0.5), pose, f, cfg)
            assert np.allclose(img[y, x], rgb, atol=1e-12)


def test_render_image_deterministic():
    f = init_field(6)
    cfg = RenderConfig(near=0.8, far=4.0, n_samples=6, jitter_seed=3)
    pose = _front_pose(fx=6.0, size=4)
    a = render_image(pose, f, cfg, 4, 4)
    b = render_image(pose, f, cfg, 4, 4)
    assert np.array_equal(a, b)


def test_empty_field_black_image():
    f = make_constant_field(0.0, (0.5, 0.5, 0.5))
    cfg = RenderConfig(near=0.5, far=3.0, n_samples=4)
    img = render_image(_front_pose(), f, cfg, 4, 4)
    assert np.allclose(img, 0.0, atol=1e-12)


def test_scale2_render_close_to_box_downsample():
    """Smooth field: rendering at half resolution resembles box-averaging."""
    from msnerf.scenes import box_downsample, psnr

    f = init_field(2)
    f.b_sigma[:] = 0.5
    cfg = RenderConfig(near=0.8, far=6.0, n_samples=12)
    full = CameraPose(np.eye(3), np.zeros(3), fx=14.4, fy=14.4,
                      cx=6.0, cy=6.0)
    half = CameraPose(np.eye(3), np.zeros(3), fx=7.2, fy=7.2,
                      cx=3.0, cy=3.0)
    img1 = render_image(full, f, cfg, 12, 12)
    img2 = render_image(half, f, cfg, 6, 6)
    assert psnr(img2, box_downsample(img1, 2)) > 30.0


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------

def test_rgb_loss_field_gradients_match_fd():
    """Four-ray squared-error loss: tape gradients vs central differences."""
    f = init_field(7, L=2, dir_octaves=1, hidden=4)
    cfg = RenderConfig(near=0.7, far=3.5, n_samples=4, L=2, dir_octaves=1)
    d = np.array([[0.05, -0.04, 0.02, 0.0],
                  [0.03, 0.06, -0.05, 0.0],
                  [1.0, 1.0, 1.0, 1.0]])
    d /= np.linalg.norm(d, axis=0)
    target = np.array([[0.2, 0.8, 0.5, 0.1],
                       [0.4, 0.1, 0.6, 0.9],
                       [0.7, 0.3, 0.2, 0.5]])

    def loss_value(field):
        rgb, _ = render_rays_world(np.zeros(3), d, 0.01, field, cfg)
        diff = rgb - target
        return float(np.sum(diff * diff))

    tape = ad.Tape()
    vf = _VarField(tape, f)
    rgb, _ = render_rays_world(np.zeros(3), d, 0.01, vf, cfg)
    diff = ad.sub(rgb, target)
    loss = ad.vsum(ad.colsum(ad.mul(diff, diff)))
    grads = tape.backward(loss)

    h = 1e-6
    for name, arr in f.arrays():
        g = np.asarray(grads[dict(vf.arrays())[name]])
        flat = arr.reshape(-1)
        gf = g.reshape(-1)
        for idx in range(flat.size):
            old = flat[idx]
            flat[idx] = old + h
            fp = loss_value(f)
            flat[idx] = old - h
            fm = loss_value(f)
            flat[idx] = old
            fd = (fp - fm) / (2 * h)
            denom = max(abs(fd), abs(gf[idx]), 1e-8)
            assert abs(gf[idx] - fd) / denom < 1e-4, (name, idx)


# ---------------------------------------------------------------------------
# Annealing plumbing
# ---------------------------------------------------------------------------

def test_anneal_weights_gate_high_octaves():
    cfg_low = RenderConfig(near=1.0, far=2.0, n_samples=2, L=4, anneal_t=0.0)
    cfg_full = RenderConfig(near=1.0, far=2.0, n_samples=2, L=4, anneal_t=None)
    w = np.asarray(cfg_low.weights())
    assert w.shape == (4,)
    assert w[0] == 1.0 and np.all(w[1:] < 1.0)
    assert cfg_full.weights() is None
    # t at or past L means every octave is fully on
    assert RenderConfig(near=1.0, far=2.0, n_samples=2, L=4,
                        anneal_t=4.0).weights() is None


def test_annealed_encoding_changes_render():
    f = init_field(9)
    pose = _front_pose()
    base = RenderConfig(near=0.8, far=4.0, n_samples=6)
    gated = RenderConfig(near=0.8, far=4.0, n_samples=6, anneal_t=0.5)
    a, _ = render_ray(_center_pixel(pose), pose, f, base)
    b, _ = render_ray(_center_pixel(pose), pose, f, gated)
    assert not np.allclose(a, b)
