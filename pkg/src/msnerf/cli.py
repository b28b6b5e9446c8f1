"""Batch experiment driver: synth / solve-poses / train / render / eval / report.

Every subcommand reads an optional flat key=value --config file,
applies --set overrides and the --seed flag, and stamps the resulting
config hash into whatever it writes, so a run can always be traced
back to its exact settings. Outputs are plain files (PNG, raw float64,
JSON, CSV).

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

import argparse
import csv
import json
import sys
from dataclasses import fields as dc_fields
from pathlib import Path

import numpy as np

from . import images as im
from . import joint, scenes
from .averaging import (RobustLoss, angular_errors, irls_rotation_average,
                        load_default_refiner, load_refiner_params,
                        refiner_forward)
from .configio import config_hash, load_config, parse_value
from .field import RenderConfig, render_image
from .viewgraph import (NoiseSpec, load_graph, perturb_edges, save_graph,
                        spanning_tree_init)

SYNTH_DEFAULTS = {
    "scene": "cluster",
    "n_cams": 12,
    "holdout": 1,
    "width": 24,
    "height": 24,
    "radii": "2.5,3.25,4.0",
    "scales": "1,2",
    "pose_sigma": 0.1,
    "edge_sigma": 0.02,
    "outlier_fraction": 0.0,
    "seed": 0,
}

SCENES = {"demo": scenes.demo_scene, "cluster": scenes.cluster_scene}


def _effective_config(args, defaults):
    cfg = dict(defaults)
    if args.config:
        cfg.update(load_config(args.config))
    for item in args.set or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        cfg[key.strip()] = parse_value(value)
    if args.seed is not None:
        cfg["seed"] = args.seed
    unknown = set(cfg) - set(defaults)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _float_list(spec):
    return [float(tok) for tok in str(spec).split(",") if tok.strip()]


def _int_list(spec):
    return [int(tok) for tok in str(spec).split(",") if tok.strip()]


def _image_name(cam, scale):
    return f"cam{cam:02d}_s{scale}"


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def _cmd_synth(args):
    cfg = _effective_config(args, SYNTH_DEFAULTS)
    if cfg["scene"] not in SCENES:
        raise ValueError(f"unknown scene {cfg['scene']!r}")
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)

    scene = SCENES[cfg["scene"]]()
    n_total = int(cfg["n_cams"]) + int(cfg["holdout"])
    rig = scenes.build_rig(n_total, _float_list(cfg["radii"]),
                           _int_list(cfg["scales"]), seed=int(cfg["seed"]),
                           width=int(cfg["width"]), height=int(cfg["height"]))
    train_rig = rig.take(int(cfg["n_cams"]))
    noisy_rig = scenes.perturb_rig_rotations(
        train_rig, float(cfg["pose_sigma"]), int(cfg["seed"]))
    graph = perturb_edges(
        joint.rig_view_graph(train_rig),
        NoiseSpec(rotation_sigma=float(cfg["edge_sigma"]),
                  outlier_fraction=float(cfg["outlier_fraction"]),
                  seed=int(cfg["seed"])))

    refs = scenes.render_reference_images(scene, rig)
    for cam in range(rig.n_cams):
        for si, scale in enumerate(rig.scales):
            stem = out / "images" / _image_name(cam, scale)
            im.save_png(f"{stem}.png", refs[cam][si])
            im.save_raw(f"{stem}.raw", refs[cam][si])

    scenes.save_json(scenes.scene_to_dict(scene), out / "scene.json")
    scenes.save_json(scenes.rig_to_dict(rig), out / "rig.json")
    scenes.save_json(scenes.rig_to_dict(noisy_rig), out / "rig_noisy.json")
    save_graph(graph, out / "graph.json")
    manifest = dict(cfg)
    manifest["config_hash"] = config_hash(cfg)
    scenes.save_json(manifest, out / "manifest.json")
    print(f"wrote dataset: {rig.n_cams} cameras x {len(rig.scales)} scales "
          f"-> {out}")
    return 0


# ---------------------------------------------------------------------------
# solve-poses
# ---------------------------------------------------------------------------

SOLVE_DEFAULTS = {
    "loss": "l2",
    "loss_param": 0.1,
    "max_iters": 50,
    "tol": 1e-8,
    "seed": 0,
}


def _robust_loss(cfg):
    name = str(cfg["loss"])
    if name == "l2":
        return RobustLoss.l2()
    if name == "huber":
        return RobustLoss.huber(float(cfg["loss_param"]))
    if name == "gm":
        return RobustLoss.gm(float(cfg["loss_param"]))
    raise ValueError(f"unknown robust loss {name!r}")


def _cmd_solve_poses(args):
    cfg = _effective_config(args, SOLVE_DEFAULTS)
    graph = load_graph(args.graph)
    if args.method == "tree":
        quats = spanning_tree_init(graph)
    elif args.method == "irls":
        quats, _ = irls_rotation_average(graph, _robust_loss(cfg),
                                         max_iters=int(cfg["max_iters"]),
                                         tol=float(cfg["tol"]))
    else:
        params = (load_refiner_params(args.params) if args.params
                  else load_default_refiner())
        quats = refiner_forward(graph, params)

    for v, q in zip(graph.vertices, quats):
        v.q_est = np.asarray(q, dtype=float)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_graph(graph, out / "solved.json")

    report = {"method": args.method, "config_hash": config_hash(cfg)}
    if graph.gt_quats() is not None:
        errs = angular_errors(quats, graph)
        report["mean_error_rad"] = float(np.mean(errs))
        report["median_error_rad"] = float(np.median(errs))
        report["per_vertex_error_rad"] = [float(e) for e in errs]
    scenes.save_json(report, out / "report.json")
    if "mean_error_rad" in report:
        print(f"{args.method}: mean {report['mean_error_rad']:.6f} rad, "
              f"median {report['median_error_rad']:.6f} rad")
    else:
        print(f"{args.method}: solved (no ground truth in graph)")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

TRAIN_EXTRA_DEFAULTS = {
    "frozen_poses": False,
    "fixed_lambda": "",
    "refiner_init": "zeros",   # zeros | bundled
}


def _train_defaults():
    d = {f.name: f.default for f in dc_fields(joint.TrainConfig)}
    d.update(TRAIN_EXTRA_DEFAULTS)
    return d


def _load_dataset(data_dir):
    data = Path(data_dir)
    manifest = scenes.load_json(data / "manifest.json")
    rig = scenes.rig_from_dict(scenes.load_json(data / "rig.json"))
    noisy = scenes.rig_from_dict(scenes.load_json(data / "rig_noisy.json"))
    graph = load_graph(data / "graph.json")
    imgs = []
    for cam in range(noisy.n_cams):
        per_scale = [im.load_raw(data / "images" /
                                 f"{_image_name(cam, s)}.raw")
                     for s in noisy.scales]
        imgs.append(per_scale)
    return manifest, rig, noisy, graph, imgs


def _eval_view_from(manifest, rig):
    """Held-out camera at the finest scale, or None without holdout."""
    if int(manifest["holdout"]) < 1:
        return None
    cam = int(manifest["n_cams"])
    pose = rig.pose(cam, rig.scales[0])
    img = im.load_raw(Path(manifest["_data_dir"]) / "images" /
                      f"{_image_name(cam, rig.scales[0])}.raw")
    return pose, img


def _cmd_train(args):
    cfg = _effective_config(args, _train_defaults())
    extra = {k: cfg.pop(k) for k in TRAIN_EXTRA_DEFAULTS}
    tc = joint.TrainConfig(**cfg)
    manifest, rig, noisy_rig, graph, imgs = _load_dataset(args.data)
    manifest["_data_dir"] = args.data
    train_rig = rig.take(noisy_rig.n_cams)
    eval_view = _eval_view_from(manifest, rig)

    if str(extra["refiner_init"]) == "bundled":
        refiner_init = load_default_refiner()
    elif str(extra["refiner_init"]) == "zeros":
        refiner_init = None
    else:
        raise ValueError(f"unknown refiner_init {extra['refiner_init']!r}")
    fixed = (None if extra["fixed_lambda"] in ("", None)
             else float(extra["fixed_lambda"]))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    state, rows = joint.train_joint(
        imgs, noisy_rig, graph, tc, gt_rig=train_rig, eval_view=eval_view,
        csv_path=out / "metrics.csv", frozen_poses=bool(extra["frozen_poses"]),
        fixed_lambda=fixed, refiner_init=refiner_init)
    joint.save_checkpoint(state, tc, str(out / "checkpoint"))

    run = {"config_hash": config_hash({**cfg, **extra}), "epochs": state.epoch,
           "final_loss": state.history[-1] if state.history else None,
           "final_rot_err_rad": rows[-1][5] if rows else None,
           "final_psnr": rows[-1][6] if rows else None,
           "frozen_poses": bool(extra["frozen_poses"]),
           "fixed_lambda": fixed}
    scenes.save_json(run, out / "run.json")
    msg = f"trained {state.epoch} epochs"
    if run["final_psnr"] is not None:
        msg += f", held-out psnr {run['final_psnr']:.2f} dB"
    print(msg)
    return 0


# ---------------------------------------------------------------------------
# render / eval
# ---------------------------------------------------------------------------

RENDER_DEFAULTS = {"n_samples": 48, "near": 0.8, "far": 8.0, "seed": 0}


def _cmd_render(args):
    cfg = _effective_config(args, RENDER_DEFAULTS)
    prefix = Path(args.checkpoint)
    if prefix.is_dir():
        prefix = prefix / "checkpoint"   # train run directory
    state = joint.load_checkpoint(str(prefix))
    rig = scenes.rig_from_dict(scenes.load_json(args.rig))
    rcfg = RenderConfig(near=float(cfg["near"]), far=float(cfg["far"]),
                        n_samples=int(cfg["n_samples"]),
                        L=state.field.L, dir_octaves=state.field.dir_octaves)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for cam in range(rig.n_cams):
        for scale in rig.scales:
            w, h = rig.resolution(scale)
            img = render_image(rig.pose(cam, scale), state.field, rcfg, w, h)
            stem = out / _image_name(cam, scale)
            im.save_png(f"{stem}.png", img)
            im.save_raw(f"{stem}.raw", img)
    print(f"rendered {rig.n_cams} cameras x {len(rig.scales)} scales -> {out}")
    return 0


def _cmd_eval(args):
    renders = sorted(Path(args.renders).glob("*.raw"))
    if not renders:
        raise ValueError(f"no .raw renders under {args.renders}")
    rows = []
    for path in renders:
        ref_path = Path(args.refs) / path.name
        if not ref_path.exists():
            raise ValueError(f"missing reference for {path.name}")
        a = im.load_raw(path)
        b = im.load_raw(ref_path)
        # shrink the structural window (odd) to fit tiny renders
        win = min(11, a.shape[0], a.shape[1])
        win -= 1 - win % 2
        rows.append((path.stem, scenes.psnr(a, b),
                     scenes.ssim(a, b, win=win)))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("image", "psnr_db", "ssim"))
        for name, p, s in rows:
            w.writerow((name, repr(float(p)), repr(float(s))))
        w.writerow(("mean", repr(float(np.mean([r[1] for r in rows]))),
                    repr(float(np.mean([r[2] for r in rows])))))
    print(f"evaluated {len(rows)} images -> {out}")
    return 0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def _cmd_report(args):
    runs = sorted(p.parent for p in Path(args.runs).glob("*/metrics.csv"))
    if not runs:
        raise ValueError(f"no run directories with metrics.csv in {args.runs}")
    rows = []
    for run_dir in runs:
        with open(run_dir / "metrics.csv", newline="") as fh:
            recs = list(csv.DictReader(fh))
        if not recs:
            raise ValueError(f"empty metrics.csv in {run_dir}")
        last = recs[-1]
        meta = {}
        if (run_dir / "run.json").exists():
            meta = scenes.load_json(run_dir / "run.json")
        rows.append({
            "run": run_dir.name,
            "epochs": len(recs),
            "final_lambda": last["lambda"],
            "final_rot_err_rad": last["mean_rot_err_rad"],
            "final_psnr": last["psnr"],
            "fixed_lambda": meta.get("fixed_lambda"),
            "frozen_poses": meta.get("frozen_poses"),
        })
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    width = max(len(r["run"]) for r in rows)
    for r in rows:
        print(f"{r['run']:<{width}}  epochs={r['epochs']:<4} "
              f"rot_err={r['final_rot_err_rad'] or '-':<22} "
              f"psnr={r['final_psnr'] or '-'}")
    return 0


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="msnerf",
        description="multi-scale radiance field + pose refinement pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("solve-poses", help="rotation averaging on a graph")
    _add_common(p)
    p.add_argument("--graph", required=True)
    p.add_argument("--method", required=True,
                   choices=("tree", "irls", "refiner"))
    p.add_argument("--params", help="refiner params blob (default: bundled)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_solve_poses)

    p = sub.add_parser("train", help="joint pose + field training")
    _add_common(p)
    p.add_argument("--data", required=True, help="synth output directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("render", help="render a checkpoint at given poses")
    _add_common(p)
    p.add_argument("--checkpoint", required=True,
                   help="train run directory or checkpoint path prefix")
    p.add_argument("--rig", required=True, help="rig JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("eval", help="PSNR/SSIM of renders vs references")
    _add_common(p)
    p.add_argument("--renders", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="summarize run directories")
    _add_common(p)
    p.add_argument("--runs", required=True,
                   help="directory containing run subdirectories")
    p.add_argument("--out", required=True, help="summary CSV path")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; here 1 is usage, 2 runtime
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
