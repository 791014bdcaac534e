"""Command-line entry point.

Exit codes: 0 success, 2 validation or format failure, 3 numerical-integrity failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from lfpcfuse import ddpm, io, losses, oracles, pffm, synth
from lfpcfuse.errors import NumericalIntegrityError, ValidationError
from lfpcfuse.geometry import project_cloud, sparse_depth_with_owner
from lfpcfuse.pipeline import Model, PipelineConfig, run_fusion
from lfpcfuse.voxelizer import assign_voxels, featurize_voxels, interpolate_points

log = logging.getLogger("lfpcfuse")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3
ORACLE_TOL = 1e-9


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args, **overrides) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    values = {k: str(v) for k, v in overrides.items() if v is not None}
    if args.seed is not None:
        values["seed"] = str(args.seed)
    return PipelineConfig.from_mapping(values, cfg) if values else cfg


def _fmt(x: float) -> str:
    return repr(float(x))


def write_report(out: Path, stem: str, report: dict[str, float]) -> None:
    (out / f"{stem}.txt").write_text("".join(f"{k} {_fmt(v)}\n" for k, v in report.items()))
    (out / f"{stem}.json").write_text(json.dumps(report, indent=2) + "\n")


# -- subcommands -------------------------------------------------------------


def cmd_synth(args) -> int:
    seed = args.seed or 0
    views = args.views or 9
    if args.scene:
        scene = synth.parse_scene(Path(args.scene).read_text())
    elif args.kind == "street":
        scene = synth.street_scene(views, seed)
    elif args.kind == "occlusion":
        scene = synth.occlusion_fixture(seed, views).scene
    else:
        scene = synth.consistent_fixture(seed, views)
    out = synth.write_dataset(args.out_dir, scene, channels=args.channels,
                              depth_jitter=args.depth_jitter, seed=seed)
    print(f"wrote {len(scene.cameras)} views, LiDAR sweep to {out}")
    return EXIT_OK


def cmd_project(args) -> int:
    cloud = io.load_cloud(args.cloud)
    camera = io.load_camera(args.calib)
    out = _out_dir(args)
    sparse, owner = sparse_depth_with_owner(camera, cloud, args.grid)
    io.save_sparse_grid(out / "sparse_depth.lfsg", sparse)
    proj = project_cloud(camera, cloud)
    summary = {"points": int(len(cloud)), "projections": len(proj), "occupied_cells": sparse.count()}
    if args.grid == "feature" and len(proj):
        grid = assign_voxels(cloud, PipelineConfig().voxel_config())
        featurize_voxels(grid, cloud, channels=args.channels)
        feats = interpolate_points(grid, np.asarray(cloud, dtype=np.float64)[:, :3]) if grid.n_occupied \
            else np.zeros((len(cloud), args.channels))
        fmap, _, stats = pffm.scatter_point_features(proj, feats[proj.point_index], camera.h, camera.w)
        io.save_feature_map(out / "scatter.lffm", fmap)
        summary.update(scattered=stats.scattered, clamped=stats.clamped, collided=stats.collided)
    (out / "project.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(" ".join(f"{k}={v}" for k, v in summary.items()))
    return EXIT_OK


def cmd_fuse(args) -> int:
    data = synth.read_dataset(args.data, depth_source=args.depth_source)
    n = args.views or len(data.cameras)
    if n > len(data.cameras):
        raise ValidationError(f"--views {n} but dataset has {len(data.cameras)} views")
    order = list(range(n))
    if args.permute:
        order = [int(x) for x in args.permute.split(",")]
        if sorted(order) != list(range(n)):
            raise ValidationError(f"--permute must be a permutation of 0..{n - 1}")
    cfg = _config(args, n_views=n, c_img=data.features[0].shape[0], c_p=data.features[0].shape[0],
                  workers=args.workers)
    pick = lambda xs: None if xs is None else [xs[i] for i in order]  # noqa: E731
    t0 = time.perf_counter()
    result = run_fusion(
        pick(data.features), pick(data.depths), data.cloud, pick(data.cameras), cfg,
        image_labels=pick(data.labels), point_labels=data.point_labels,
    )
    elapsed = time.perf_counter() - t0
    out = _out_dir(args)
    for i, v in enumerate(result.views):
        vdir = out / f"view_{i:02d}"
        vdir.mkdir(exist_ok=True)
        io.save_feature_map(vdir / "fused.lffm", v.fused)
        io.save_feature_map(vdir / "img_logits.lffm", v.img_logits)
        io.save_feature_map(vdir / "fused_logits.lffm", v.fused_logits)
        if v.depth_diff is not None:
            io.save_sparse_grid(vdir / "depth_diff.lfsg", v.depth_diff)
    io.save_feature_map(out / "point_logits.lffm", result.point_logits[:, None, :])
    io.save_feature_map(out / "voxel_logits.lffm", result.voxel_logits[:, None, :])
    if result.losses is not None:
        write_report(out, "loss_report", result.losses)
    (out / "diagnostics.json").write_text(json.dumps(result.diagnostics, indent=2) + "\n")
    log.info("fused %d views in %.2fs", n, elapsed)
    if result.losses is not None:
        print(f"L_total {_fmt(result.losses['L_total'])}")
    return EXIT_OK


def cmd_losses(args) -> int:
    logits = io.load_feature_map(args.logits).astype(np.float64)
    labels = io.load_label_map(args.labels)
    if logits.shape[1:] != labels.shape:
        raise ValidationError(f"logits {logits.shape[1:]} vs labels {labels.shape}")
    ce, lov = losses.segmentation_loss(logits, labels)
    report = {"L_ce": ce, "L_lovasz": lov, "L_sum": ce + lov}
    for k, v in report.items():
        print(f"{k} {_fmt(v)}")
    if args.out_dir:
        write_report(_out_dir(args), "loss_report", report)
    return EXIT_OK


def cmd_eval(args) -> int:
    pred_path = Path(args.pred)
    if pred_path.suffix == ".lffm":
        pred = np.argmax(io.load_feature_map(pred_path), axis=0)
    else:
        pred = io.load_label_map(pred_path)
    labels = io.load_label_map(args.labels)
    if pred.shape != labels.shape:
        raise ValidationError(f"prediction {pred.shape} vs labels {labels.shape}")
    iou, miou = losses.mean_iou(pred, labels, args.num_classes)
    lines = [f"iou_{c} {_fmt(x)}" for c, x in enumerate(iou)] + [f"miou {_fmt(miou)}"]
    print("\n".join(lines))
    if args.out_dir:
        out = _out_dir(args)
        (out / "eval.txt").write_text("\n".join(lines) + "\n")
        js = {"iou": [None if math.isnan(x) else float(x) for x in iou],
              "miou": None if math.isnan(miou) else float(miou)}
        (out / "eval.json").write_text(json.dumps(js, indent=2) + "\n")
    return EXIT_OK


def oracle_deviations(data: synth.Dataset, cfg: PipelineConfig, max_points: int = 200) -> dict[str, float]:
    """Run each kernel and its brute-force twin on a dataset; maximum absolute deviations."""
    model = Model.seeded(cfg)
    cloud = np.asarray(data.cloud, dtype=np.float64)
    dev: dict[str, float] = {k: 0.0 for k in ("projection", "interpolation", "voxel", "attention", "conv")}

    grid = assign_voxels(cloud, cfg.voxel_config())
    featurize_voxels(grid, cloud, channels=cfg.c_p)
    feats = interpolate_points(grid, cloud[:, :3], cfg.eps_voxel)
    sample = np.linspace(0, len(cloud) - 1, min(max_points, len(cloud))).astype(int)
    for i in sample:
        ref = oracles.voxel_interpolate(grid.indices, grid.features, cfg.voxel_resolution, cloud[i], cfg.eps_voxel)
        dev["voxel"] = max(dev["voxel"], float(np.abs(ref - feats[i]).max()))

    for cam, f_img, depth in zip(data.cameras, data.features, data.depths):
        proj = project_cloud(cam, cloud)
        for j in range(0, len(proj), max(1, len(proj) // max_points)):
            p = proj[j]
            u, v, d = oracles.project_point(cam.K, cam.T, cloud[p.point_index])
            dev["projection"] = max(dev["projection"], abs(u - p.u), abs(v - p.v), abs(d - p.depth))
        if not len(proj):
            continue
        scattered, sparse, _ = pffm.scatter_point_features(proj, feats[proj.point_index], cam.h, cam.w)
        rect = pffm.compute_bounding_rectangle(proj, cam.h, cam.w)
        got = pffm.interpolate_missing(scattered, sparse, rect, cfg.eps_interp)
        ref = oracles.interpolate_missing(scattered, sparse.mask, (rect.x_min, rect.x_max, rect.y_min, rect.y_max),
                                          cfg.eps_interp)
        dev["interpolation"] = max(dev["interpolation"], float(np.abs(got - ref).max()))

    # the quadratic-cost checks run on the first view only
    cam, f_img, depth = data.cameras[0], data.features[0], data.depths[0]
    sparse, _ = sparse_depth_with_owner(cam, cloud, "feature")
    diff = ddpm.log_depth_difference(depth, sparse, cfg.eps_depth)
    st = model.conv
    hidden = oracles.conv2d_same(diff.values[None], st.w1, st.b1)
    ref_embed = oracles.conv2d_same(hidden, st.w2, st.b2)
    d_hat = ddpm.conv2_embed(diff, st)
    dev["conv"] = float(np.abs(d_hat - ref_embed).max())
    fused = pffm.fuse_concat(np.asarray(f_img, dtype=np.float64), np.asarray(f_img, dtype=np.float64))
    a = model.attention
    refined, raw = pffm.self_attention(fused, a, bias=d_hat, ln_eps=cfg.ln_eps)
    ref_refined, ref_raw, _ = oracles.attention(fused, a.W_Q, a.W_K, a.W_V, a.gamma, a.beta, d_hat, cfg.ln_eps)
    dev["attention"] = max(float(np.abs(raw - ref_raw).max()), float(np.abs(refined - ref_refined).max()))
    return dev


def cmd_oracle(args) -> int:
    data = synth.read_dataset(args.data, depth_source=args.depth_source)
    n = args.views or len(data.cameras)
    data.cameras, data.features, data.depths = data.cameras[:n], data.features[:n], data.depths[:n]
    c = data.features[0].shape[0]
    cfg = _config(args, n_views=n, c_img=c, c_p=c)
    dev = oracle_deviations(data, cfg, args.max_points)
    worst = max(dev.values())
    for k, v in dev.items():
        print(f"{k} {v:.3e} {'ok' if v <= args.tol else 'FAIL'}")
    if args.out_dir:
        (_out_dir(args) / "oracle.json").write_text(json.dumps(dev, indent=2) + "\n")
    if worst > args.tol:
        raise NumericalIntegrityError(f"oracle deviation {worst:.3e} exceeds {args.tol:.1e}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value pipeline configuration file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--views", type=int, default=None, help="number of views to use/generate")
    common.add_argument("--out-dir", default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lfpcfuse", description="LiDAR / light-field feature fusion kernels")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset directory")
    s.add_argument("--kind", choices=["street", "occlusion", "consistent"], default="street")
    s.add_argument("--scene", help="scene description file (overrides --kind)")
    s.add_argument("--channels", type=int, default=48)
    s.add_argument("--depth-jitter", type=float, default=0.0)
    s.set_defaults(func=cmd_synth, out_dir_required=True)

    s = sub.add_parser("project", parents=[common], help="project a cloud through one calibration")
    s.add_argument("--cloud", required=True)
    s.add_argument("--calib", required=True)
    s.add_argument("--grid", choices=["image", "feature"], default="image")
    s.add_argument("--channels", type=int, default=48)
    s.set_defaults(func=cmd_project, out_dir_required=True)

    for name, func, helptext in (("fuse", cmd_fuse, "run the full pipeline on a dataset directory"),
                                 ("oracle", cmd_oracle, "compare kernels with brute-force oracles")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--data", required=True, help="dataset directory")
        s.add_argument("--depth-source", choices=["file", "plane"], default="file")
        s.set_defaults(func=func, out_dir_required=name == "fuse")
    sub.choices["fuse"].add_argument("--workers", type=int, default=None)
    sub.choices["fuse"].add_argument("--permute", help="comma-separated view order")
    sub.choices["oracle"].add_argument("--tol", type=float, default=ORACLE_TOL)
    sub.choices["oracle"].add_argument("--max-points", type=int, default=200)

    s = sub.add_parser("losses", parents=[common], help="CE and Lovasz-Softmax of a logit map")
    s.add_argument("--logits", required=True)
    s.add_argument("--labels", required=True)
    s.set_defaults(func=cmd_losses, out_dir_required=False)

    s = sub.add_parser("eval", parents=[common], help="per-class IoU and mIoU")
    s.add_argument("--pred", required=True, help=".lflm labels or .lffm logits")
    s.add_argument("--labels", required=True)
    s.add_argument("--num-classes", type=int, default=losses.NUM_CLASSES)
    s.set_defaults(func=cmd_eval, out_dir_required=False)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.out_dir_required and not args.out_dir:
        print(f"error: {args.command} needs --out-dir", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except NumericalIntegrityError as exc:
        print(f"numerical integrity failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
