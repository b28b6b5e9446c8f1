"""Joint pose-and-field training: L = lambda*L_mra + (1-lambda)*L_rgb.

Rotations are always the refiner's output on the measured view graph,
re-anchored so camera 0 keeps its input absolute rotation; translations
are free per-camera variables stepped by the rendering loss alone. The
weight lambda follows a warmup-then-exponential-decay schedule with a
hard floor, and the positional-encoding anneal variable advances
linearly over the joint phase.

Everything runs through the shared tape, so one backward pass yields
field gradients and refiner gradients (both the direct motion-averaging
term and the chain through the rendered poses); a second backward on
the rendering term alone supplies the translation updates.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import autodiff as ad
from . import quatops as qo
from . import so3
from .averaging import (RefinerParams, _refiner_core, _VarParams,
                        graph_constants, load_refiner_params,
                        save_refiner_params)
from .configio import config_hash
from .field import (RenderConfig, _pixel_rays, _VarField, init_field,
                    load_field, render_image, render_rays_world, save_field)
from .ipe import pixel_radius_for
from .viewgraph import Edge, Vertex, ViewGraph, spanning_tree_init


def rig_view_graph(rig, hops=(1, 2)):
    """Ring view graph over the rig's cameras with exact measurements.

    Each camera connects to its next `hops` neighbors around the ring
    (modulo n), giving every vertex redundant cycles; apply a NoiseSpec
    with viewgraph.perturb_edges to get a measurement problem.
    """
    n = rig.n_cams
    quats = [so3.quat_normalize(q) for q in rig.quats]
    vertices = [Vertex(i, q_gt=quats[i]) for i in range(n)]
    edges, seen = [], set()
    for i in range(n):
        for h in hops:
            j = (i + h) % n
            a, b = min(i, j), max(i, j)
            if a == b or (a, b) in seen:
                continue
            seen.add((a, b))
            q = so3.quat_mul(quats[b], so3.quat_conj(quats[a]))
            edges.append(Edge(a, b, q))
    return ViewGraph(vertices, edges).validate()


@dataclass(frozen=True)
class TrainConfig:
    """Schedule, loss weighting, and step sizes for joint optimization."""

    epochs: int = 100
    warmup_epochs: int = None     # None: 20% of epochs
    decay_k: float = None         # None: ln 2 over 10% of epochs
    lambda0: float = 1.0
    lambda_floor: float = 0.5
    beta: float = 1.0             # absolute-term weight inside L_mra
    anneal_b: float = 1.0
    L_octaves: int = 4
    dir_octaves: int = 2
    hidden: int = 64
    refiner_hidden: int = 32
    refiner_rounds: int = 4
    n_samples: int = 16
    near: float = 0.5
    far: float = 8.0
    rays_per_camera: int = 48
    lr_field: float = 1e-3        # theta step (Adam)
    lr_refiner: float = 2e-2      # Theta step
    lr_trans: float = 2e-4
    refiner_clip: float = 1.0     # global-norm cap on the Theta gradient
    jitter: bool = True
    eval_every: int = 1           # epochs between PSNR renders (last always)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 < self.lambda_floor < 1.0:
            raise ValueError("lambda_floor must be in (0, 1)")
        if self.warmup_epochs is not None and self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")
        for name in ("lr_field", "lr_refiner", "lr_trans", "refiner_clip"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be > 0")
        if self.decay_k is not None and self.decay_k <= 0.0:
            raise ValueError("decay_k must be > 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")

    @property
    def warmup(self):
        if self.warmup_epochs is not None:
            return self.warmup_epochs
        return max(1, round(0.2 * self.epochs))

    @property
    def decay(self):
        if self.decay_k is not None:
            return self.decay_k
        return math.log(2.0) / max(1, round(0.1 * self.epochs))


def lambda_schedule(epoch, cfg):
    """1 through warmup, then exponential decay clamped at the floor."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch < cfg.warmup:
        return 1.0
    return max(cfg.lambda0 * math.exp(-cfg.decay * (epoch - cfg.warmup)),
               cfg.lambda_floor)


def anneal_progress(epoch, cfg):
    """Encoding anneal t: 0 through warmup, linear to L_octaves after.

    Hits L_octaves exactly at the final epoch so the last training
    steps see the full encoding.
    """
    joint = cfg.epochs - cfg.warmup
    if epoch < cfg.warmup or joint <= 0:
        return 0.0
    if joint == 1:
        return float(cfg.L_octaves)
    return cfg.L_octaves * (epoch - cfg.warmup) / (joint - 1.0)


# ---------------------------------------------------------------------------
# Problem setup
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RayBatch:
    """Rays of one camera at one scale: pixel centers plus RGB targets."""

    cam: int
    pixels: np.ndarray    # (R, 2) sample positions in pixel units
    targets: np.ndarray   # (3, R)
    fx: float
    fy: float
    cx: float
    cy: float


def sample_ray_batches(rig, images, epoch, cfg):
    """One RayBatch per (camera, scale), pixels drawn without replacement.

    Deterministic in (cfg.seed, epoch); iteration order is camera-major
    so gradient accumulation order is fixed.
    """
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 23, epoch)))
    batches = []
    for cam in range(rig.n_cams):
        for s_idx, scale in enumerate(rig.scales):
            w, h = rig.resolution(scale)
            img = images[cam][s_idx]
            if img.shape != (h, w, 3):
                raise ValueError(f"image for cam {cam} scale {scale} has "
                                 f"shape {img.shape}, expected {(h, w, 3)}")
            count = min(cfg.rays_per_camera, w * h)
            flat = rng.choice(w * h, size=count, replace=False)
            ys, xs = np.divmod(flat, w)
            pixels = np.stack([xs + 0.5, ys + 0.5], axis=1)
            pose = rig.pose(cam, scale)
            batches.append(RayBatch(cam, pixels, img[ys, xs].T.copy(),
                                    pose.fx, pose.fy, pose.cx, pose.cy))
    return batches


def all_ray_batches(rig, images):
    """Every pixel of every camera and scale (small toy problems only)."""
    batches = []
    for cam in range(rig.n_cams):
        for s_idx, scale in enumerate(rig.scales):
            w, h = rig.resolution(scale)
            img = images[cam][s_idx]
            ys, xs = np.divmod(np.arange(w * h), w)
            pixels = np.stack([xs + 0.5, ys + 0.5], axis=1)
            pose = rig.pose(cam, scale)
            batches.append(RayBatch(cam, pixels, img[ys, xs].T.copy(),
                                    pose.fx, pose.fy, pose.cx, pose.cy))
    return batches


def _copy_field(f):
    return replace(f, **{name: arr.copy() for name, arr in f.arrays()})


def _copy_refiner(p):
    out = RefinerParams.zeros(p.hidden, p.rounds)
    for (_, dst), (_, src) in zip(out.arrays(), p.arrays()):
        dst[...] = src
    return out


@dataclass
class JointState:
    """Everything the optimizer owns, snapshot-able per epoch."""

    field: object
    refiner: RefinerParams
    translations: np.ndarray   # (N, 3)
    anchor: np.ndarray         # camera-0 absolute rotation (gauge)
    quats: list                # current anchored absolute estimates
    epoch: int
    history: list              # combined loss per completed epoch

    def snapshot(self):
        return JointState(
            _copy_field(self.field), _copy_refiner(self.refiner),
            self.translations.copy(), self.anchor.copy(),
            [q.copy() for q in self.quats], self.epoch, list(self.history))


def initial_state(rig, graph, cfg, refiner_init=None):
    """Field from cfg.seed, zero refiner, poses from the rig.

    The zero refiner outputs the spanning tree of the measured graph
    exactly, so optimization starts from the classic initializer; pass
    refiner_init (e.g. load_default_refiner()) to start elsewhere. The
    rig passed here carries the noisy absolute poses; its camera-0
    rotation becomes the gauge anchor for every later estimate.
    """
    field = init_field(cfg.seed, L=cfg.L_octaves, dir_octaves=cfg.dir_octaves,
                       hidden=cfg.hidden)
    refiner = _copy_refiner(refiner_init if refiner_init is not None
                            else RefinerParams.zeros(cfg.refiner_hidden,
                                                     cfg.refiner_rounds))
    anchor = so3.quat_normalize(rig.quats[0])
    translations = np.array([np.asarray(t, dtype=float)
                             for t in rig.translations])
    state = JointState(field, refiner, translations, anchor, [], 0, [])
    state.quats = _current_quats(state, graph_constants(graph))
    return state


def _current_quats(state, consts):
    Q = _refiner_core(consts, state.refiner)
    Qa = qo.mul_cols_single(Q, state.anchor)
    return [so3.quat_normalize(Qa[:, v]) for v in range(consts.n)]


# ---------------------------------------------------------------------------
# Loss assembly
# ---------------------------------------------------------------------------

def _surrogate_stacks(graph):
    """Fixed targets for the joint-phase motion-averaging term.

    The relative term compares against the measured edge quaternions;
    the absolute term tethers to the spanning-tree estimates (ground
    truth is never consulted during optimization).
    """
    idx_i, idx_j = graph.edge_index_arrays()
    meas = np.stack([so3.quat_normalize(e.q_meas) for e in graph.edges],
                    axis=1)
    tree = np.stack(spanning_tree_init(graph), axis=1)
    return idx_i, idx_j, meas, tree


def _mra_surrogate(Q, stacks, beta):
    idx_i, idx_j, meas, tree = stacks
    P_rel = qo.mul_cols(ad.gather_cols(Q, idx_j),
                        qo.conj_cols(ad.gather_cols(Q, idx_i)))
    rel = ad.vsum(qo.d_q_cols(P_rel, meas))
    absq = ad.vsum(qo.d_q_cols(Q, tree))
    return ad.add(rel, ad.mul(absq, float(beta)))


def _camera_rays(q, t, batch):
    """World origin and ray directions for one camera's batch.

    q, t may be tape variables; x_cam = R x_world + t means the world
    directions are R^T d_cam and the center is -R^T t.
    """
    d_cam = _pixel_rays(batch.pixels, batch)
    qc = qo.conj_vec(q)
    d_world = qo.rotate_cols(qc, d_cam)
    origin = ad.neg(ad.getcol(qo.rotate_cols(qc, ad.reshape(t, (3, 1))), 0))
    return origin, d_world


def _rgb_loss(field, Qa, tvars, batches, rcfg):
    """Sum of squared RGB error over every ray in the batches."""
    total = None
    for b in batches:
        q = ad.getcol(Qa, b.cam)
        origin, d_world = _camera_rays(q, tvars[b.cam], b)
        rgb, _ = render_rays_world(origin, d_world, pixel_radius_for(b.fx),
                                   field, rcfg)
        diff = ad.sub(rgb, b.targets)
        term = ad.vsum(ad.colsum(ad.mul(diff, diff)))
        total = term if total is None else ad.add(total, term)
    return total


def _render_config(cfg, anneal_t, jitter_seed=None):
    if anneal_t is not None and anneal_t >= cfg.L_octaves:
        anneal_t = None
    return RenderConfig(near=cfg.near, far=cfg.far, n_samples=cfg.n_samples,
                        L=cfg.L_octaves, dir_octaves=cfg.dir_octaves,
                        anneal_t=anneal_t, anneal_b=cfg.anneal_b,
                        jitter_seed=jitter_seed)


def _taped_losses(tape, state, batches, stacks, consts, cfg, anneal_t):
    """(L_mra node, L_rgb node, var handles) on one shared tape."""
    vf = _VarField(tape, state.field)
    vp = _VarParams(tape, state.refiner)
    tvars = [tape.var(state.translations[v])
             for v in range(state.translations.shape[0])]
    Q = _refiner_core(consts, vp)
    loss_mra = _mra_surrogate(Q, stacks, cfg.beta)
    Qa = qo.mul_cols_single(Q, state.anchor)
    rcfg = _render_config(cfg, anneal_t)
    loss_rgb = _rgb_loss(vf, Qa, tvars, batches, rcfg)
    return loss_mra, loss_rgb, vf, vp, tvars


def combined_loss(state, batches, graph, cfg, lam, anneal_t=None):
    """lambda*L_mra + (1-lambda)*L_rgb over the given ray batches."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must be in [0, 1]")
    tape = ad.Tape()
    stacks = _surrogate_stacks(graph)
    consts = graph_constants(graph)
    loss_mra, loss_rgb, _, _, _ = _taped_losses(
        tape, state, batches, stacks, consts, cfg, anneal_t)
    total = ad.add(ad.mul(loss_mra, float(lam)),
                   ad.mul(loss_rgb, 1.0 - lam))
    return float(total.value)


def combined_loss_and_grads(state, batches, graph, cfg, lam, anneal_t=None):
    """Loss plus gradients for every field, refiner, and translation
    parameter, keyed like 'field.w1' / 'refiner.w_att' / 'trans.3'."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must be in [0, 1]")
    tape = ad.Tape()
    stacks = _surrogate_stacks(graph)
    consts = graph_constants(graph)
    loss_mra, loss_rgb, vf, vp, tvars = _taped_losses(
        tape, state, batches, stacks, consts, cfg, anneal_t)
    total = ad.add(ad.mul(loss_mra, float(lam)),
                   ad.mul(loss_rgb, 1.0 - lam))
    grads = tape.backward(total)
    out = {}
    for name, var in vf.arrays():
        out[f"field.{name}"] = grads[var]
    for name, var in vp.arrays():
        out[f"refiner.{name}"] = grads[var]
    for v, tv in enumerate(tvars):
        out[f"trans.{v}"] = grads[tv]
    return float(total.value), out


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("epoch", "lambda", "anneal_t", "L_rgb", "L_mra",
               "mean_rot_err_rad", "psnr")


def _fmt(x):
    return "" if x is None else repr(float(x))


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([row[0]] + [_fmt(v) for v in row[1:]])


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(state, cfg, prefix):
    """Field and refiner blobs plus a JSON manifest keyed to the config.

    Writes <prefix>.field.bin/.json, <prefix>.refiner.bin/.json and
    <prefix>.state.json; the manifest stores the TrainConfig hash so a
    resume under different settings is refused.
    """
    save_field(state.field, f"{prefix}.field.bin")
    save_refiner_params(state.refiner, f"{prefix}.refiner.bin")
    manifest = {
        "config_hash": config_hash(asdict(cfg)),
        "epoch": state.epoch,
        "history": [float(v) for v in state.history],
        "anchor": [float(v) for v in state.anchor],
        "translations": np.asarray(state.translations).tolist(),
        "quats": [np.asarray(q).tolist() for q in state.quats],
    }
    with open(f"{prefix}.state.json", "w") as fh:
        json.dump(manifest, fh)


def load_checkpoint(prefix, cfg=None):
    """Inverse of save_checkpoint; cfg, when given, must hash-match."""
    with open(f"{prefix}.state.json") as fh:
        manifest = json.load(fh)
    if cfg is not None and manifest["config_hash"] != config_hash(asdict(cfg)):
        raise ValueError("checkpoint was written under a different config")
    return JointState(
        load_field(f"{prefix}.field.bin"),
        load_refiner_params(f"{prefix}.refiner.bin"),
        np.asarray(manifest["translations"], dtype=float),
        np.asarray(manifest["anchor"], dtype=float),
        [np.asarray(q, dtype=float) for q in manifest["quats"]],
        int(manifest["epoch"]),
        [float(v) for v in manifest["history"]])


def _gauge_delta(gt_rig, anchor):
    """delta with estimate-frame rotation q_v ~ q_gt_v * delta."""
    return so3.quat_normalize(
        so3.quat_mul(so3.quat_conj(gt_rig.quats[0]), anchor))


def eval_pose_in_estimate_frame(pose, gt_rig, anchor):
    """Re-express a ground-truth camera in the optimizer's gauge.

    The estimates inherit camera 0's (noisy) input rotation, so the
    learned scene is the true scene rotated by delta; translations are
    unchanged because t = -R c picks up the same delta on both factors.
    """
    delta = _gauge_delta(gt_rig, anchor)
    q = so3.matrix_to_quat(pose.rotation)
    R = so3.quat_to_matrix(so3.quat_mul(q, delta))
    return so3.CameraPose(R, pose.translation, pose.fx, pose.fy,
                          pose.cx, pose.cy)


def pose_error_report(quats, gt_quats):
    """Per-camera geodesic angles after aligning camera 0, plus summary."""
    r0 = so3.quat_conj(so3.quat_normalize(quats[0]))
    g0 = so3.quat_conj(so3.quat_normalize(gt_quats[0]))
    per = [float(so3.geodesic_angle(so3.quat_mul(q, r0),
                                    so3.quat_mul(g, g0)))
           for q, g in zip(quats, gt_quats)]
    return {"per_camera": per,
            "mean": float(np.mean(per)),
            "median": float(np.median(per))}


def _mean_rot_err(quats, gt_quats):
    return pose_error_report(quats, gt_quats)["mean"]


def _eval_psnr(state, gt_rig, eval_view, cfg, anneal_t):
    from .scenes import psnr
    pose_gt, target = eval_view
    pose = eval_pose_in_estimate_frame(pose_gt, gt_rig, state.anchor)
    h, w = target.shape[:2]
    img = render_image(pose, state.field, _render_config(cfg, anneal_t), w, h)
    return psnr(img, target)


def _untaped_rgb_value(state, batches, rcfg):
    """L_rgb at the current state without a tape, for warmup logging."""
    Qa = np.stack(state.quats, axis=1)
    tvars = [state.translations[v] for v in range(len(state.quats))]
    return float(_rgb_loss(state.field, Qa, tvars, batches, rcfg))


class _FieldAdam:
    """Adam moments for the field arrays only; pose terms stay on SGD.

    Plain SGD stalls long before the field is sharp at these sizes (the
    density head saturates, silhouettes stop improving), and the late
    epochs then oscillate instead of converging. The moments live
    outside checkpoints, so a resumed run re-warms them.
    """

    B1, B2, EPS = 0.9, 0.999, 1e-8

    def __init__(self):
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, field, grads, lr):
        self.t += 1
        c1 = 1.0 - self.B1 ** self.t
        c2 = 1.0 - self.B2 ** self.t
        for (name, arr), g in zip(field.arrays(), grads):
            m = self.m.setdefault(name, np.zeros_like(arr))
            v = self.v.setdefault(name, np.zeros_like(arr))
            m += (1.0 - self.B1) * (g - m)
            v += (1.0 - self.B2) * (g * g - v)
            arr -= lr * (m / c1) / (np.sqrt(v / c2) + self.EPS)


def train_joint(images, rig, graph, cfg, gt_rig=None, eval_view=None,
                csv_path=None, frozen_poses=False, fixed_lambda=None,
                refiner_init=None):
    """Warmup (pose-only, lambda=1) then annealed joint optimization.

    images: images[cam][scale_idx] matching rig resolutions. rig: the
    noisy input poses (anchor and initial translations come from it).
    gt_rig enables the per-epoch rotation-error column; eval_view is a
    (CameraPose, image) pair for the PSNR column. frozen_poses trains
    the field only, at the rig's poses, with the identical epoch budget
    and schedules. fixed_lambda overrides the schedule (and removes the
    warmup) to run the constant-weighting ablation. A non-finite loss
    aborts and returns the last finite-epoch state.

    Returns (state, rows) where rows are the CSV metric tuples.
    """
    graph.validate()
    if graph.n != rig.n_cams:
        raise ValueError("graph size does not match rig")
    stacks = _surrogate_stacks(graph)
    consts = graph_constants(graph)
    state = initial_state(rig, graph, cfg, refiner_init)
    warmup = 0 if fixed_lambda is not None else cfg.warmup
    acfg = replace(cfg, warmup_epochs=warmup)
    if frozen_poses:
        state.quats = [so3.quat_normalize(q) for q in rig.quats]

    rows = []
    good = state.snapshot()
    adam = _FieldAdam()
    for epoch in range(cfg.epochs):
        lam = (float(fixed_lambda) if fixed_lambda is not None
               else lambda_schedule(epoch, cfg))
        t_anneal = anneal_progress(epoch, acfg)
        batches = sample_ray_batches(rig, images, epoch, cfg)
        rcfg = _render_config(
            cfg, t_anneal,
            jitter_seed=(cfg.seed, 31, epoch) if cfg.jitter else None)

        try:
            tape = ad.Tape()
            vf = _VarField(tape, state.field)
            if frozen_poses:
                # identical budget to the joint arm: same warmup gate
                # and the same (1 - lambda) weight on the field term
                Qa = np.stack(state.quats, axis=1)
                loss_mra_val = float(_mra_surrogate(
                    qo.gauge_to_vertex0(Qa), stacks, cfg.beta))
                if epoch < warmup:
                    total, loss_rgb = None, None
                else:
                    loss_rgb = _rgb_loss(
                        vf, Qa, list(state.translations), batches, rcfg)
                    total = ad.mul(loss_rgb, 1.0 - lam)
                vp = tvars = None
            else:
                vp = _VarParams(tape, state.refiner)
                tvars = [tape.var(state.translations[v])
                         for v in range(rig.n_cams)]
                Q = _refiner_core(consts, vp)
                loss_mra = _mra_surrogate(Q, stacks, cfg.beta)
                loss_mra_val = float(loss_mra.value)
                if epoch < warmup:
                    # pose-only phase: lambda = 1 zeroes the field term,
                    # so skip the render graph and log L_rgb untaped.
                    total, loss_rgb = loss_mra, None
                else:
                    Qa = qo.mul_cols_single(Q, state.anchor)
                    loss_rgb = _rgb_loss(vf, Qa, tvars, batches, rcfg)
                    total = ad.add(ad.mul(loss_mra, lam),
                                   ad.mul(loss_rgb, 1.0 - lam))
            if total is None:
                total_val, grads = loss_mra_val, None
            else:
                total_val = float(total.value)
                if not math.isfinite(total_val):
                    raise ValueError("non-finite loss")
                grads = tape.backward(total)
        except ValueError:
            state = good
            break

        if frozen_poses:
            rgb_val = (float(loss_rgb.value) if loss_rgb is not None
                       else _untaped_rgb_value(state, batches, rcfg))
            if grads is not None:
                # log the same composite the joint arm minimizes
                total_val = lam * loss_mra_val + (1.0 - lam) * rgb_val
                adam.step(state.field, [grads[var] for _, var in
                                        vf.arrays()], cfg.lr_field)
        else:
            rgb_val = (float(loss_rgb.value) if loss_rgb is not None
                       else _untaped_rgb_value(state, batches, rcfg))
            # d_q terms have norm-type gradients that do not shrink with
            # the residual, so the Theta step is norm-clipped like
            # refiner training; the field step needs no such guard.
            gvecs = [grads[var] for _, var in vp.arrays()]
            gnorm = math.sqrt(sum(float(np.sum(g ** 2)) for g in gvecs))
            scale = (cfg.lr_refiner * min(1.0, cfg.refiner_clip / gnorm)
                     if gnorm > 0 else 0.0)
            for g, (_, arr) in zip(gvecs, state.refiner.arrays()):
                arr -= scale * g
            if epoch >= warmup:
                adam.step(state.field, [grads[var] for _, var in
                                        vf.arrays()], cfg.lr_field)
                rgb_grads = tape.backward(loss_rgb)
                for v, tv in enumerate(tvars):
                    state.translations[v] -= cfg.lr_trans * rgb_grads[tv]
            state.quats = _current_quats(state, consts)

        if not all(np.all(np.isfinite(arr)) for _, arr in
                   state.field.arrays()):
            state = good
            break
        state.epoch = epoch + 1
        state.history.append(total_val)
        good = state.snapshot()

        rot_err = (None if gt_rig is None
                   else _mean_rot_err(state.quats, list(gt_rig.quats)))
        # the render is pure readout, so sparse sampling never feeds back
        # into training; the final epoch always evaluates
        do_eval = (epoch % cfg.eval_every == 0 or epoch == cfg.epochs - 1)
        view_psnr = (None if eval_view is None or gt_rig is None or not do_eval
                     else _eval_psnr(state, gt_rig, eval_view, cfg, t_anneal))
        rows.append((epoch, lam, t_anneal, rgb_val, loss_mra_val,
                     rot_err, view_psnr))

    if csv_path is not None:
        write_metrics_csv(csv_path, rows)
    return state, rows
