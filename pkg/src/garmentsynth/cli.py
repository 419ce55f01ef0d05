"""Command line entry point.

Subcommands: gen-data, train-coarse, train-render, render, evaluate,
finetune-body, finetune-bg. Shared flags: --config, --seed, --out, --views,
--no-motion-features, --relayer, --resolution.

Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 schema mismatch.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import re
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import coarse as coarse_mod
from . import dataset as ds_mod
from . import sim as sim_mod
from . import training as train_mod
from .config import PipelineConfig, load_config
from .domain import (Camera, MeshSequence, MotionClip, SkeletonPose, TriMesh,
                     make_descriptor)
from .errors import ConfigError, NumericalError, SchemaMismatchError
from .features import NeuralTexture, descriptor_for_frame
from .generator import Generator, render_frame
from .raster import rasterize
from .relayer import LayerInputs, relayer


def _resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.out is not None:
        cfg = cfg.replace(out_dir=args.out)
    if args.views is not None:
        if args.views < 1:
            raise ConfigError("--views must be >= 1")
        cfg = cfg.replace(num_views=args.views)
    if args.no_motion_features:
        cfg = cfg.replace(motion_features=False)
    if args.relayer:
        cfg = cfg.replace(relayer=True)
    if args.resolution is not None:
        m = re.fullmatch(r"(\d+)x(\d+)", args.resolution)
        if not m:
            raise ConfigError("--resolution must look like 128x128")
        cfg = cfg.replace(resolution=(int(m.group(1)), int(m.group(2))))
    return cfg


def _descriptor_record(cfg: PipelineConfig) -> dict:
    d = cfg.descriptor.to_dict()
    d["num_joints"] = len(sim_mod.JOINT_NAMES)
    return d


def _check_meta_descriptor(meta: ds_mod.DatasetMeta, cfg: PipelineConfig) -> None:
    if (meta.descriptor_stride != cfg.descriptor.stride
            or meta.descriptor_count != cfg.descriptor.count):
        raise SchemaMismatchError(
            f"dataset descriptor (stride={meta.descriptor_stride}, "
            f"count={meta.descriptor_count}) does not match config "
            f"(stride={cfg.descriptor.stride}, count={cfg.descriptor.count})")
    if abs(meta.sigma - cfg.descriptor.sigma) > 1e-9:
        raise SchemaMismatchError(
            f"dataset sigma {meta.sigma} does not match config {cfg.descriptor.sigma}")


def _palette_from_meta(meta: ds_mod.DatasetMeta) -> sim_mod.Palette:
    if "palette" in meta.extras:
        return sim_mod.Palette.from_dict(meta.extras["palette"])
    return sim_mod.Palette()


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    t0 = time.perf_counter()
    out = Path(args.out) if args.out else Path(cfg.dataset_dir)

    clip = sim_mod.animate_skeleton(cfg.motion.style, cfg.motion.num_frames,
                                    cfg.motion.fps, seed=cfg.seed)
    body = sim_mod.default_body_proxy(cfg.sim.body_radius_scale)
    palette = sim_mod.Palette(background_color=tuple(cfg.background_rgb))

    coarse_mesh = sim_mod.build_garment_grid(cfg.garment, cfg.sim.coarse_spacing)
    target_mesh = sim_mod.build_garment_grid(cfg.garment, cfg.sim.target_spacing)

    def sim_params(spacing: float) -> sim_mod.SimParams:
        return sim_mod.SimParams(
            substeps=cfg.sim.substeps, iterations=cfg.sim.iterations,
            stretch_compliance=cfg.sim.stretch_compliance,
            pin_vertices=sim_mod.pin_ring(cfg.garment, spacing),
            collision_margin=cfg.sim.collision_margin,
            particle_spacing=spacing, seed=cfg.seed,
            damping=cfg.sim.damping, strain_tol=cfg.sim.strain_tol)

    print(f"simulating coarse proxy ({coarse_mesh.num_vertices} vertices) ...")
    coarse_seq = sim_mod.simulate(coarse_mesh, clip, body, sim_params(cfg.sim.coarse_spacing))
    print(f"simulating target garment ({target_mesh.num_vertices} vertices) ...")
    target_seq = sim_mod.simulate(target_mesh, clip, body, sim_params(cfg.sim.target_spacing))

    cameras = sim_mod.ring_cameras(cfg.num_views, cfg.resolution, seed=cfg.seed)
    meta = ds_mod.DatasetMeta(
        fps=cfg.motion.fps, num_frames=len(clip),
        num_joints=len(sim_mod.JOINT_NAMES),
        joint_names=tuple(sim_mod.JOINT_NAMES),
        resolution=cfg.resolution, views=tuple(c.view_id for c in cameras),
        descriptor_stride=cfg.descriptor.stride,
        descriptor_count=cfg.descriptor.count,
        sigma=cfg.descriptor.sigma, garment=cfg.garment,
        extras={"palette": palette.to_dict(),
                "body_radius_scale": cfg.sim.body_radius_scale,
                "motion_style": cfg.motion.style})

    print(f"rendering {cfg.num_views} view(s) x {len(clip)} frames ...")
    frames = sim_mod.render_ground_truth(target_seq, body, clip, cameras,
                                         palette, cfg.resolution)
    ds_mod.write_container(out, meta, clip, coarse_seq, cameras, frames)
    sha = hashlib.sha256(ds_mod.joints_path(out).read_bytes()).hexdigest()[:16]
    print(f"container written to {out} in {time.perf_counter() - t0:.1f}s "
          f"(joints sha256 {sha})")
    return 0


# ---------------------------------------------------------------------------
# train-coarse
# ---------------------------------------------------------------------------

def cmd_train_coarse(args) -> int:
    cfg = _resolve_config(args)
    ds = ds_mod.Dataset(args.dataset)
    _check_meta_descriptor(ds.meta, cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    codec, normalizer = coarse_mod.train_codec(
        ds.coarse, ds.clip, epochs=cfg.train.coarse_epochs,
        lr=cfg.train.coarse_lr, batch_size=cfg.train.coarse_batch, seed=cfg.seed)
    menc = coarse_mod.train_motion_encoder(
        ds.coarse, ds.clip, codec, normalizer,
        stride=cfg.descriptor.stride, count=cfg.descriptor.count,
        epochs=cfg.train.coarse_epochs, lr=cfg.train.coarse_lr,
        batch_size=cfg.train.coarse_batch, seed=cfg.seed)

    topo = {
        "faces": ds.coarse.topology.faces.tolist(),
        "uv": ds.coarse.topology.uv.tolist(),
        "rest_vertices": ds.coarse.frame(0).tolist(),
    }
    ckpt = out / "coarse.pt"
    coarse_mod.save_coarse_checkpoint(ckpt, codec, menc, normalizer,
                                      _descriptor_record(cfg), topo)

    errs = []
    diag = ds.coarse.topology.bbox_diagonal()
    for t in range(len(ds.clip)):
        desc = make_descriptor(ds.clip, t, stride=cfg.descriptor.stride,
                               count=cfg.descriptor.count)
        pred = coarse_mod.predict_coarse(codec, menc, normalizer, desc,
                                         ds.clip.poses[t].root)
        errs.append(np.sqrt(np.mean((pred - ds.coarse.frame(t)) ** 2)))
    rmse = float(np.mean(errs))
    print(f"coarse checkpoint {ckpt} in {time.perf_counter() - t0:.1f}s; "
          f"train RMSE {rmse:.4f} m ({100 * rmse / diag:.2f}% of bbox diagonal)")
    return 0


# ---------------------------------------------------------------------------
# train-render / fine-tunes
# ---------------------------------------------------------------------------

def _build_render_dataset(args, cfg: PipelineConfig):
    ds = ds_mod.Dataset(args.dataset)
    _check_meta_descriptor(ds.meta, cfg)
    views = None
    if args.views is not None:
        views = list(ds.meta.views)[: args.views]
    return ds, train_mod.RenderDataset.from_container(ds, cfg, views=views)


def cmd_train_render(args) -> int:
    cfg = _resolve_config(args)
    ds, data = _build_render_dataset(args, cfg)
    if tuple(ds.meta.resolution) != tuple(cfg.resolution):
        cfg = cfg.replace(resolution=tuple(ds.meta.resolution))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    gen = Generator(cfg.descriptor_channels)
    texture = NeuralTexture(cfg.texture.levels, cfg.texture.channels,
                            cfg.texture.base_resolution, seed=cfg.seed)
    disc = train_mod.PatchDiscriminator()
    torch.manual_seed(cfg.seed)

    t0 = time.perf_counter()
    history = train_mod.train_renderer(
        data, gen, texture, disc, cfg, log_path=out / "train_log.csv",
        progress=_progress_printer(cfg.train.log_every))
    ckpt = out / "renderer.pt"
    train_mod.save_renderer_checkpoint(ckpt, gen, texture, disc,
                                       _descriptor_record(cfg), cfg.resolution,
                                       cfg.motion_features)
    final = history[-1]
    print(f"renderer checkpoint {ckpt} after {len(history)} steps in "
          f"{time.perf_counter() - t0:.1f}s (l_percept {final['l_percept']:.4f})")
    return 0


def _progress_printer(every: int):
    def cb(row):
        if row["step"] % max(every, 1) == 0 or "probe_mse" in row:
            extra = f" probe_mse {row['probe_mse']:.5f}" if "probe_mse" in row else ""
            print(f"step {row['step']}: l_d {row['l_d']:.3f} "
                  f"l_feat {row['l_feat']:.3f} l_percept {row['l_percept']:.3f} "
                  f"l_gan {row['l_gan']:.3f}{extra}")
    return cb


def _load_render_ckpt(path, cfg: PipelineConfig):
    gen, texture, disc, info = train_mod.load_renderer_checkpoint(
        path, expected_descriptor=_descriptor_record(cfg))
    return gen, texture, disc, info


def cmd_finetune_body(args) -> int:
    cfg = _resolve_config(args)
    gen, texture, disc, info = _load_render_ckpt(args.render_ckpt, cfg)
    if bool(info["motion_features"]) != cfg.motion_features:
        raise SchemaMismatchError("checkpoint motion-feature setting differs from config")
    ds, data = _build_render_dataset(args, cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    history = train_mod.finetune_body_shape(
        data, gen, texture, disc, cfg, base_steps=args.base_steps,
        log_path=out / "finetune_body_log.csv",
        progress=_progress_printer(cfg.train.log_every))
    ckpt = out / "renderer_body.pt"
    train_mod.save_renderer_checkpoint(ckpt, gen, texture, disc,
                                       _descriptor_record(cfg),
                                       tuple(info["resolution"]),
                                       cfg.motion_features)
    print(f"body fine-tune checkpoint {ckpt} after {len(history)} steps in "
          f"{time.perf_counter() - t0:.1f}s")
    return 0


def cmd_finetune_bg(args) -> int:
    cfg = _resolve_config(args)
    gen, texture, disc, info = _load_render_ckpt(args.render_ckpt, cfg)
    if bool(info["motion_features"]) != cfg.motion_features:
        raise SchemaMismatchError("checkpoint motion-feature setting differs from config")
    ds, data = _build_render_dataset(args, cfg)
    if len(data.samples) < 2:
        raise ConfigError("background fine-tune needs at least 2 example frames")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    history = train_mod.finetune_background(
        data, gen, texture, disc, cfg, iters=args.iters,
        log_path=out / "finetune_bg_log.csv",
        progress=_progress_printer(cfg.train.log_every))
    ckpt = out / "renderer_bg.pt"
    train_mod.save_renderer_checkpoint(ckpt, gen, texture, disc,
                                       _descriptor_record(cfg),
                                       tuple(info["resolution"]),
                                       cfg.motion_features)
    print(f"background fine-tune checkpoint {ckpt} after {len(history)} steps "
          f"in {time.perf_counter() - t0:.1f}s")
    return 0


# ---------------------------------------------------------------------------
# render
# ---------------------------------------------------------------------------

def _load_motion(source: str):
    """Motion from a clip JSON file or a dataset container directory."""
    path = Path(source)
    if path.is_dir():
        meta = ds_mod.load_meta(path)
        return ds_mod.load_joints(path, meta), meta
    if not path.is_file():
        raise ConfigError(f"motion source not found: {path}")
    d = json.loads(path.read_text())
    if "joints" not in d or "fps" not in d:
        raise SchemaMismatchError("clip JSON needs 'fps' and 'joints' keys")
    arr = np.asarray(d["joints"], dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise SchemaMismatchError("clip joints must be [T][J][3]")
    clip = MotionClip(tuple(SkeletonPose(a) for a in arr), fps=float(d["fps"]))
    return clip, None


def _camera_for_render(args, meta, resolution) -> Camera:
    if args.camera:
        cam = Camera.from_dict(json.loads(Path(args.camera).read_text()))
    elif meta is not None:
        view = args.view if args.view is not None else meta.views[0]
        if view not in meta.views:
            raise SchemaMismatchError(f"view {view} not in container")
        cam = ds_mod.load_cameras(Path(args.motion), meta)[view]
    else:
        raise ConfigError("render needs --camera when motion is not a container")
    if tuple(cam.resolution) != tuple(resolution):
        cam = cam.with_resolution(resolution)
    return cam


def cmd_render(args) -> int:
    cfg = _resolve_config(args)
    codec, menc, normalizer, desc_cfg, topo = coarse_mod.load_coarse_checkpoint(
        args.coarse_ckpt, expected_descriptor=_descriptor_record(cfg))
    gen, texture, disc, info = _load_render_ckpt(args.render_ckpt, cfg)
    motion_features = bool(info["motion_features"])
    if args.no_motion_features and motion_features:
        raise SchemaMismatchError(
            "checkpoint was trained with motion features; cannot disable at render")

    clip, meta = _load_motion(args.motion)
    resolution = tuple(cfg.resolution) if args.resolution else tuple(info["resolution"])
    camera = _camera_for_render(args, meta, resolution)
    palette = _palette_from_meta(meta) if meta else sim_mod.Palette()
    radius_scale = meta.extras.get("body_radius_scale", 1.0) if meta else 1.0
    body = sim_mod.default_body_proxy(radius_scale)

    faces = np.asarray(topo["faces"], dtype=np.int64)
    uv = np.asarray(topo["uv"], dtype=np.float64)
    rest = np.asarray(topo["rest_vertices"], dtype=np.float64)
    proxy = TriMesh(rest, faces, uv)

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timing_path = out / "timing.csv"

    stride = int(desc_cfg["stride"])
    count = int(desc_cfg["count"])
    sigma = float(desc_cfg.get("sigma", cfg.descriptor.sigma))
    arm_ids = np.asarray(body.arm_capsules, dtype=np.int64)

    # predicted coarse vertices per frame (the rendering proxy)
    pred_frames = np.empty((len(clip), proxy.num_vertices, 3))
    for t in range(len(clip)):
        desc = make_descriptor(clip, t, stride=stride, count=count)
        pred_frames[t] = coarse_mod.predict_coarse(codec, menc, normalizer, desc,
                                                   clip.poses[t].root)
    pred_seq = MeshSequence(proxy, pred_frames)

    gen.eval()
    q_prev = None
    rows = []
    for t in range(len(clip)):
        t_start = time.perf_counter()
        gbuf = rasterize(pred_seq.frame(t), proxy, camera, resolution)
        body_mesh, face_cap = sim_mod.body_mesh_at(body, clip.poses[t])
        body_buf = rasterize(body_mesh.vertices, body_mesh, camera, resolution)
        normals = sim_mod.face_normals_of(body_mesh.vertices, body_mesh.faces)
        colors = np.tile(np.asarray(palette.body_color), (body_mesh.num_faces, 1))
        bg_img = sim_mod.shade(body_buf, normals, colors, palette)

        q_t = descriptor_for_frame(texture, gbuf, pred_seq, clip, t, sigma,
                                   stride=int(desc_cfg.get("map_stride", 2)),
                                   maps=int(desc_cfg.get("motion_maps", 6)),
                                   motion_features=motion_features)
        with torch.no_grad():
            qt = q_t.chw().unsqueeze(0).float()
            qp = (q_prev if q_prev is not None else qt)
            bgt = torch.from_numpy(bg_img).permute(2, 0, 1).unsqueeze(0)
            r, a = gen(qt, qp, bgt)
        frame = r[0].permute(1, 2, 0).numpy()
        q_prev = qt

        if cfg.relayer:
            arm_mask = np.zeros(resolution, dtype=np.uint8)
            ys, xs = np.nonzero(body_buf.mask)
            if ys.size:
                is_arm = np.isin(face_cap[body_buf.triangle_id[ys, xs]], arm_ids)
                arm_mask[ys[is_arm], xs[is_arm]] = 1
            arm_depth = np.where(arm_mask != 0, body_buf.depth, np.inf)
            garment_mask = (a[0, 0].numpy() >= 0.5).astype(np.uint8)
            frame = relayer(LayerInputs(
                render=frame, body_render=bg_img, arm_mask=arm_mask,
                garment_mask=garment_mask, arm_depth=arm_depth,
                garment_depth=gbuf.depth))

        ds_mod.save_png(out / f"r_{t}.png", frame)
        dt = time.perf_counter() - t_start
        rows.append((t, dt))
        print(f"frame {t}: {dt * 1000:.0f} ms")

    with open(timing_path, "w") as fh:
        fh.write("frame,seconds\n")
        for t, dt in rows:
            fh.write(f"{t},{dt:.6f}\n")
    mean_ms = 1000 * sum(dt for _, dt in rows) / len(rows)
    print(f"{len(rows)} frames to {out} (mean {mean_ms:.0f} ms/frame)")
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

_NUM_RE = re.compile(r"(\d+)")


def _collect_pngs(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"not a directory: {directory}")
    files = sorted(directory.glob("*.png"))
    for prefix in ("gt_", "r_"):
        pref = [f for f in files if f.name.startswith(prefix)]
        if pref:
            files = pref
            break
    if not files:
        raise SchemaMismatchError(f"no PNG frames in {directory}")

    def key(f: Path) -> int:
        m = _NUM_RE.search(f.stem)
        if not m:
            raise SchemaMismatchError(f"frame file {f.name} has no index")
        return int(m.group(1))

    return sorted(files, key=key)


def cmd_evaluate(args) -> int:
    pred_files = _collect_pngs(args.pred)
    gt_files = _collect_pngs(args.gt)
    if len(pred_files) != len(gt_files):
        raise SchemaMismatchError(
            f"frame count mismatch: {len(pred_files)} pred vs {len(gt_files)} gt")
    pred = np.stack([ds_mod.load_png(f) for f in pred_files])
    gt = np.stack([ds_mod.load_png(f) for f in gt_files])
    if pred.shape != gt.shape:
        raise SchemaMismatchError(f"frame shapes differ: {pred.shape} vs {gt.shape}")
    record = train_mod.evaluate(pred, gt)
    out = Path(args.out) if args.out else Path(args.pred) / "metrics.json"
    train_mod.write_metrics(out, record)
    print(f"mu_mse {record['mu_mse']:.6f} sigma_mse {record['sigma_mse']:.6f} "
          f"-> {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing / dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="pipeline config JSON")
    shared.add_argument("--seed", type=int, default=None)
    shared.add_argument("--out", default=None, help="output directory")
    shared.add_argument("--views", type=int, default=None,
                        help="camera count (gen-data) or training-view count")
    shared.add_argument("--no-motion-features", action="store_true")
    shared.add_argument("--relayer", action="store_true")
    shared.add_argument("--resolution", default=None, help="HxW, e.g. 128x128")

    parser = argparse.ArgumentParser(
        prog="garmentsynth",
        description="Dynamic garment synthesis: simulate, train, render.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[shared],
                       help="simulate a clip and write a dataset container")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-coarse", parents=[shared],
                       help="train the shape codec and motion encoder")
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_train_coarse)

    p = sub.add_parser("train-render", parents=[shared],
                       help="train the neural renderer adversarially")
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_train_render)

    p = sub.add_parser("render", parents=[shared],
                       help="synthesize frames for a motion clip")
    p.add_argument("--motion", required=True,
                   help="clip JSON or dataset container directory")
    p.add_argument("--camera", default=None, help="camera JSON file")
    p.add_argument("--view", type=int, default=None,
                   help="container view id (when --motion is a container)")
    p.add_argument("--coarse-ckpt", required=True)
    p.add_argument("--render-ckpt", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("evaluate", parents=[shared],
                       help="compare a rendered sequence against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("finetune-body", parents=[shared],
                       help="adapt a trained renderer to a new body shape")
    p.add_argument("--dataset", required=True)
    p.add_argument("--render-ckpt", required=True)
    p.add_argument("--base-steps", type=int, default=None,
                   help="from-scratch budget the fraction applies to")
    p.set_defaults(func=cmd_finetune_body)

    p = sub.add_parser("finetune-bg", parents=[shared],
                       help="adapt the refinement head to a new background")
    p.add_argument("--dataset", required=True)
    p.add_argument("--render-ckpt", required=True)
    p.add_argument("--iters", type=int, default=None)
    p.set_defaults(func=cmd_finetune_bg)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except SchemaMismatchError as e:
        print(f"schema mismatch: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
