"""Command-line surface: scene generation, rendering, extraction,
training, sampling and evaluation.

Every command is deterministic given its flags; errors exit nonzero with
a single ``error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import extraction, layout as layout_mod, meshing, metrics, raycast, scorenet, sensor
from .config import load_config
from .layout import Pose, SceneParams


def _parse_pose(text: str) -> Pose:
    parts = [float(tok) for tok in text.replace(",", " ").split()]
    if len(parts) != 4:
        raise ValueError(f"pose must be 'x,y,z,yaw_deg', got {text!r}")
    return Pose(translation=tuple(parts[:3]), yaw=math.radians(parts[3]))


def _read_trajectory(path):
    poses = []
    with open(path) as f:
        for ln, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"{path}:{ln}: trajectory lines are 'x y z yaw_deg'")
            poses.append(Pose(tuple(float(p) for p in parts[:3]), math.radians(float(parts[3]))))
    return poses


def cmd_gen_scenes(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = SceneParams()
    for i in range(args.num):
        scene = layout_mod.generate_random_scene(args.seed + i, params)
        layout_mod.save_layout(out / f"scene_{i:05d}.layout", scene)
    print(f"wrote {args.num} layouts to {out}")


def _render_one(scene, spec, pose, args, cfg):
    img, cos = raycast.render_conditional(
        scene, spec, pose, tessellation=cfg["render.tessellation"], return_incidence=True
    )
    if args.raydrop:
        img = raycast.apply_raydrop(img, cfg.raydrop_params(), cos, seed=args.seed)
    return img


def cmd_render(args):
    cfg = load_config(args.sensor)
    spec = cfg.sensor_spec()
    scene = layout_mod.load_layout(args.layout)
    if args.surface_sample is not None:
        mesh = meshing.mesh_layout(scene, cfg["render.tessellation"])
        cloud = raycast.surface_sample(mesh, args.surface_sample, seed=args.seed)
        sensor.write_point_cloud(args.out, cloud)
        print(f"wrote {len(cloud)} surface-sampled points to {args.out}")
        return
    if args.trajectory:
        poses = _read_trajectory(args.trajectory)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for i, pose in enumerate(poses):
            img = _render_one(scene, spec, pose, args, cfg)
            sensor.write_lri(out / f"frame_{i:05d}.lri", img)
            if args.cloud:
                cloud = raycast.sensor_to_world(sensor.range_image_to_point_cloud(img), spec, pose)
                sensor.write_point_cloud(out / f"frame_{i:05d}.xyz", cloud)
        print(f"wrote {len(poses)} frames to {out}")
    else:
        pose = _parse_pose(args.pose)
        img = _render_one(scene, spec, pose, args, cfg)
        sensor.write_lri(args.out, img)
        if args.cloud:
            cloud = raycast.sensor_to_world(sensor.range_image_to_point_cloud(img), spec, pose)
            sensor.write_point_cloud(str(args.out) + ".xyz", cloud)
        print(f"wrote {args.out}")


def cmd_extract(args):
    cfg = load_config(args.config)
    cloud = sensor.read_point_cloud(args.cloud)
    palette = layout_mod.DEFAULT_PALETTE
    result = extraction.extract_layout(cloud, params_by_label=cfg.cluster_params(palette), palette=palette)
    layout_mod.save_layout(args.out, result)
    print(f"extracted {len(result.primitives)} primitives to {args.out}")


def cmd_unproject(args):
    fx, fy, cx, cy = (float(tok) for tok in args.intrinsics.replace(",", " ").split())
    depth_img = sensor.read_lri(args.depth)
    sem_img = sensor.read_lri(args.semantic)
    intr = extraction.CameraIntrinsics(
        fx, fy, cx, cy, width=depth_img.spec.cols, height=depth_img.spec.rows
    )
    cloud = extraction.unproject_depth_semantic(depth_img.data[0], sem_img.data[0], intr)
    sensor.write_point_cloud(args.out, cloud)
    print(f"wrote {len(cloud)} pseudo points to {args.out}")


def _load_training_images(data_dir):
    """Normalized depth channels of all *.lri files (conditioning frames
    named *.cond.lri are paired separately)."""
    targets = sorted(p for p in Path(data_dir).glob("*.lri") if not p.name.endswith(".cond.lri"))
    if not targets:
        raise ValueError(f"no .lri files in {data_dir}")
    images, conds = [], []
    for path in targets:
        img = sensor.read_lri(path)
        images.append(sensor.normalize_depth(img.depth, img.spec)[None])
        cond_path = path.with_name(path.stem + ".cond.lri")
        if cond_path.exists():
            cimg = sensor.read_lri(cond_path)
            depth_n = sensor.normalize_depth(cimg.data[0], cimg.spec)
            sem = cimg.data[1] if cimg.channels > 1 else np.zeros_like(depth_n)
            denom = max(len(layout_mod.DEFAULT_PALETTE) - 1, 1)
            conds.append(np.stack([depth_n, sem / denom]))
    return np.array(images, dtype=np.float32), (np.array(conds, dtype=np.float32) if conds else None)


def cmd_train(args):
    cfg = load_config(args.config)
    images, conds = _load_training_images(args.data)
    train_cfg = cfg.train_config(
        phase=args.phase if args.controlnet else "uncond",
        checkpoint_path=args.out,
    )
    if args.steps is not None:
        train_cfg.steps = args.steps
    if args.seed is not None:
        train_cfg.seed = args.seed
    if args.controlnet:
        if not args.base:
            raise ValueError("--controlnet requires --base CKPT")
        if conds is None:
            raise ValueError("conditional training requires *.cond.lri pairs")
        state = scorenet.load_checkpoint(args.base)
        if state.adapter is None:
            state.adapter = scorenet.ControlAdapter(state.model, seed=train_cfg.seed)
        before = state.model.param_checksum()
        scorenet.train(state, (images, conds), train_cfg, log=print)
        assert state.model.param_checksum() == before, "base parameters changed during conditional training"
    else:
        model = scorenet.ScoreModel(cfg.model_config(), seed=train_cfg.seed)
        state = scorenet.TrainState(model=model, schedule=cfg.noise_schedule())
        scorenet.train(state, images, train_cfg, log=print)
    scorenet.save_checkpoint(args.out, state)
    print(f"saved checkpoint to {args.out} at step {state.step}")


def cmd_sample(args):
    cfg = load_config(args.config)
    spec = cfg.sensor_spec()
    state = scorenet.load_checkpoint(args.ckpt)
    sampler_cfg = cfg.sampler_config()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cond = None
    if args.layout:
        scene = layout_mod.load_layout(args.layout)
        pose = _parse_pose(args.pose) if args.pose else Pose()
        cimg = raycast.render_conditional(scene, spec, pose, tessellation=cfg["render.tessellation"])
        depth_n = sensor.normalize_depth(cimg.depth, spec)
        denom = max(len(scene.palette) - 1, 1)
        cond = np.stack([depth_n, cimg.data[1] / denom]).astype(np.float32)
        if state.adapter is None:
            raise ValueError("checkpoint has no conditioning adapter; train with --controlnet")
    score_fn = scorenet.model_score_fn(state.model, adapter=state.adapter if cond is not None else None, cond=cond)
    shape = (state.model.config.in_channels, spec.rows, spec.cols)
    for i in range(args.num):
        x = scorenet.sample_annealed_langevin(score_fn, state.schedule, sampler_cfg, shape, seed=args.seed + i)
        depth = sensor.denormalize_depth(np.clip(x[0], 0.0, 1.0), spec)
        img = sensor.RangeImage(spec, depth[None])
        sensor.write_lri(out / f"sample_{i:05d}.lri", img)
    print(f"wrote {args.num} samples to {out}")


def _load_cloud_dir(path):
    clouds = []
    for f in sorted(Path(path).glob("*.lri")):
        img = sensor.read_lri(f)
        clouds.append((img, sensor.range_image_to_point_cloud(img)))
    if not clouds:
        raise ValueError(f"no .lri files in {path}")
    return clouds


def cmd_eval(args):
    wanted = [m.strip() for m in args.metrics.split(",") if m.strip()]
    gen = _load_cloud_dir(args.gen)
    ref = _load_cloud_dir(args.ref)
    report = {}
    if "jsd" in wanted:
        grid = metrics.BevGrid()
        merged_gen = sensor.LabeledPointCloud(np.vstack([c.points for _, c in gen]))
        merged_ref = sensor.LabeledPointCloud(np.vstack([c.points for _, c in ref]))
        report["jsd"] = metrics.jsd(metrics.bev_histogram(merged_gen, grid), metrics.bev_histogram(merged_ref, grid))
    if "mmd" in wanted:
        report["mmd"] = metrics.mmd([c.points for _, c in gen], [c.points for _, c in ref])
    if "frechet" in wanted:
        feats_gen = np.array([metrics.log_depth_features(img) for img, _ in gen])
        feats_ref = np.array([metrics.log_depth_features(img) for img, _ in ref])
        report["frechet"] = metrics.frechet(feats_gen, feats_ref)
    if args.layout:
        scene = layout_mod.load_layout(args.layout)
        spec = gen[0][0].spec
        recalls, ious = [], []
        for img, cloud in gen:
            world = raycast.sensor_to_world(cloud, spec, Pose())
            recall, iou = metrics.layout_consistency(scene, world, spec)
            recalls.append(recall)
            ious.append(iou)
        report["box_recall"] = float(np.mean(recalls))
        report["bev_iou"] = float(np.mean(ious))
    for key, val in report.items():
        print(f"{key}={val:.6g}")
    if args.csv:
        with open(args.csv, "w") as f:
            f.write("metric,value\n")
            for key, val in report.items():
                f.write(f"{key},{val:.9g}\n")


def build_parser():
    parser = argparse.ArgumentParser(prog="lidarscene", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenes", help="generate random layout files")
    p.add_argument("--num", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_scenes)

    p = sub.add_parser("render", help="raycast a layout into range images")
    p.add_argument("--layout", required=True)
    p.add_argument("--sensor", default=None, help="config file for the sensor")
    p.add_argument("--pose", default="0,0,0,0")
    p.add_argument("--trajectory", default=None, help="file of 'x y z yaw_deg' lines")
    p.add_argument("--out", required=True)
    p.add_argument("--raydrop", action="store_true")
    p.add_argument("--surface-sample", type=float, default=None, metavar="DENSITY")
    p.add_argument("--cloud", action="store_true", help="also write point-cloud text")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("extract", help="layout from a labeled point cloud")
    p.add_argument("--cloud", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("unproject", help="pseudo point cloud from depth+semantic maps")
    p.add_argument("--depth", required=True)
    p.add_argument("--semantic", required=True)
    p.add_argument("--intrinsics", required=True, help="fx,fy,cx,cy")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_unproject)

    p = sub.add_parser("train", help="train the score model")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--controlnet", action="store_true")
    p.add_argument("--base", default=None)
    p.add_argument("--phase", choices=["a", "b", "ab"], default="ab")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="annealed Langevin sampling")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--layout", default=None)
    p.add_argument("--pose", default=None)
    p.add_argument("--num", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="metric report over sample directories")
    p.add_argument("--gen", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--metrics", default="jsd,mmd,frechet")
    p.add_argument("--layout", default=None)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:  # single-line machine-parseable failure
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
