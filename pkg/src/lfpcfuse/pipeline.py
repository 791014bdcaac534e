"""End-to-end dataflow for ``n`` camera views and one LiDAR sweep.

Image branch, per view::

    project -> scatter -> bounding rect -> 3-NN completion -> fill outside rect
    -> alignment loss -> concat -> depth-difference embedding -> attention -> heads

Point branch: voxelize -> featurize -> interpolate back to points -> concat
with the view-averaged refined image features gathered at each projection ->
point head; voxel features -> voxel head.

The heads are untrained, seeded linear classifiers; they exist so the loss
stack has real inputs, not to produce meaningful segmentations.
"""

from __future__ import annotations

import contextlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from lfpcfuse import ddpm, losses, pffm
from lfpcfuse.errors import LfpcError, ValidationError
from lfpcfuse.geometry import CameraModel, SparseGrid, as_cloud, grid_cells, project_cloud
from lfpcfuse.voxelizer import (
    VoxelGrid,
    VoxelGridConfig,
    assign_voxels,
    featurize_voxels,
    interpolate_points,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    n_views: int = 9
    c_img: int = 48
    c_p: int = 48
    c_q: int = 32
    c_k: int = 32
    c_v: int = 48
    conv_hidden: int = 8
    num_classes: int = losses.NUM_CLASSES
    voxel_resolution: float = 0.1
    voxel_min: tuple[float, float, float] = (-50.0, 6.0, -7.0)
    voxel_max: tuple[float, float, float] = (50.0, 106.0, 11.0)
    max_points_per_voxel: int = 5
    eps_interp: float = 1e-8
    eps_voxel: float = 1e-8
    eps_depth: float = 1e-8
    ln_eps: float = pffm.LAYERNORM_EPS
    alpha1: float = 0.5
    alpha2: float = 0.5
    align_weight: float = 1.0
    depth_bias: bool = True
    seed: int = 0
    stream_threshold: int = pffm.STREAM_THRESHOLD
    workers: int = 1

    def __post_init__(self) -> None:
        dims = ("n_views", "c_img", "c_p", "c_q", "c_k", "c_v", "conv_hidden", "num_classes",
                "max_points_per_voxel", "stream_threshold", "workers")
        for name in dims:
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.c_q != self.c_k:
            raise ValidationError("c_q must equal c_k")
        if self.c_p != self.c_img:
            raise ValidationError(f"c_p ({self.c_p}) must equal c_img ({self.c_img}) to fill outside the rectangle")
        if self.align_weight < 0:
            raise ValidationError("align_weight must be non-negative")
        losses.LossWeights(self.alpha1, self.alpha2)
        self.voxel_config()

    def voxel_config(self) -> VoxelGridConfig:
        return VoxelGridConfig(
            self.voxel_resolution, tuple(self.voxel_min), tuple(self.voxel_max),
            self.max_points_per_voxel,
        )

    @property
    def C(self) -> int:
        return self.c_p + self.c_img

    @classmethod
    def from_mapping(cls, values: dict[str, str], base: "PipelineConfig | None" = None) -> "PipelineConfig":
        """Build from string values (``key=value`` files, CLI overrides)."""
        base = base or cls()
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ValidationError(f"unknown config key {key!r}")
            current = getattr(base, key)
            try:
                if isinstance(current, bool):
                    if raw.lower() not in ("1", "0", "true", "false", "yes", "no"):
                        raise ValueError(f"not a boolean: {raw!r}")
                    kwargs[key] = raw.lower() in ("1", "true", "yes")
                elif isinstance(current, tuple):
                    kwargs[key] = tuple(float(x) for x in raw.replace(",", " ").split())
                elif isinstance(current, int):
                    kwargs[key] = int(raw)
                else:
                    kwargs[key] = float(raw)
            except ValueError as exc:
                raise ValidationError(f"config key {key!r}: {exc}") from None
        return replace(base, **kwargs)

    @classmethod
    def from_file(cls, path, base: "PipelineConfig | None" = None) -> "PipelineConfig":
        values = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
        return cls.from_mapping(values, base)


@dataclass(frozen=True)
class LinearHead:
    """Per-position linear classifier over the leading channel axis."""

    weight: np.ndarray  # (in, classes)
    bias: np.ndarray

    @classmethod
    def seeded(cls, n_in: int, n_out: int, seed: int) -> "LinearHead":
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((n_in, n_out)) / np.sqrt(n_in), np.zeros(n_out))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        c = x.shape[0]
        flat = x.reshape(c, -1)
        out = self.weight.T @ flat + self.bias[:, None]
        return out.reshape((self.weight.shape[1],) + x.shape[1:])


@dataclass(frozen=True)
class Model:
    attention: pffm.AttentionParams
    conv: ddpm.ConvStack
    fused_head: LinearHead
    image_head: LinearHead
    point_head: LinearHead
    voxel_head: LinearHead

    @classmethod
    def seeded(cls, cfg: PipelineConfig) -> "Model":
        s = cfg.seed
        return cls(
            attention=pffm.AttentionParams.seeded(cfg.C, cfg.c_q, cfg.c_k, cfg.c_v, seed=s),
            conv=ddpm.ConvStack.seeded(cfg.c_v, hidden=cfg.conv_hidden, seed=s + 1),
            fused_head=LinearHead.seeded(cfg.c_v, cfg.num_classes, s + 2),
            image_head=LinearHead.seeded(cfg.c_v + cfg.c_img, cfg.num_classes, s + 3),
            point_head=LinearHead.seeded(cfg.c_p + cfg.c_v, cfg.num_classes, s + 4),
            voxel_head=LinearHead.seeded(cfg.c_p, cfg.num_classes, s + 5),
        )


@dataclass
class ViewResult:
    fused: np.ndarray  # refined (C_v, h, w)
    fill_point: np.ndarray
    img_logits: np.ndarray
    fused_logits: np.ndarray
    depth_diff: SparseGrid | None
    align: float
    gathered_index: np.ndarray  # point indices seen by this view
    gathered: np.ndarray  # (M, C_v) refined features at those points
    diagnostics: dict


@dataclass
class FusionResult:
    views: list[ViewResult]
    point_logits: np.ndarray  # (K, N)
    voxel_logits: np.ndarray  # (K, N1)
    point_features: np.ndarray  # (N, c_p + C_v) head input
    voxels: VoxelGrid
    losses: dict[str, float] | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def fused(self) -> list[np.ndarray]:
        return [v.fused for v in self.views]

    @property
    def img_logits(self) -> list[np.ndarray]:
        return [v.img_logits for v in self.views]


@contextlib.contextmanager
def stage(where: str) -> Iterator[None]:
    """Re-raise package errors with the view/stage that produced them."""
    try:
        yield
    except LfpcError as exc:
        raise type(exc)(f"{where}: {exc}") from exc


def _view_pass(
    i: int,
    features: np.ndarray,
    depth: np.ndarray,
    camera: CameraModel,
    cloud: np.ndarray,
    point_feats: np.ndarray,
    model: Model,
    cfg: PipelineConfig,
) -> ViewResult:
    where = f"view {i}"
    with stage(f"{where}, input"):
        f_img = pffm.as_feature_map(features, "image features")
        if f_img.shape != (cfg.c_img, camera.h, camera.w):
            raise ValidationError(
                f"features {f_img.shape} do not match ({cfg.c_img}, {camera.h}, {camera.w})"
            )
    h, w = camera.h, camera.w
    with stage(f"{where}, projection"):
        proj = project_cloud(camera, cloud)
    diag: dict = {"projections": len(proj)}
    if len(proj) == 0:
        # no point reaches this view: the point map degenerates to the image map
        fill = f_img.copy()
        sparse = SparseGrid.empty(h, w)
        stats = pffm.ScatterStats(0, 0, 0, 0)
        diag.update(rect=None, degenerate=True)
    else:
        with stage(f"{where}, scatter"):
            scattered, sparse, stats = pffm.scatter_point_features(
                proj, point_feats[proj.point_index], h, w
            )
            rect = pffm.compute_bounding_rectangle(proj, h, w)
        with stage(f"{where}, completion"):
            completed = pffm.interpolate_missing(scattered, sparse, rect, cfg.eps_interp)
            fill = pffm.fill_outside(completed, f_img, rect)
        diag.update(rect=[rect.x_min, rect.x_max, rect.y_min, rect.y_max], degenerate=False)
    diag.update(scattered=stats.scattered, clamped=stats.clamped, collided=stats.collided,
                sparse_cells=sparse.count())
    align, _ = pffm.alignment_loss(fill, f_img)
    fused = pffm.fuse_concat(fill, f_img)

    diff = None
    d_hat = None
    if cfg.depth_bias:
        with stage(f"{where}, depth difference"):
            diff = ddpm.log_depth_difference(depth, sparse, cfg.eps_depth)
            d_hat = ddpm.conv2_embed(diff, model.conv)
        diag["mean_abs_depth_diff"] = (
            float(np.abs(diff.values[diff.mask]).mean()) if diff.count() else None
        )
    with stage(f"{where}, attention"):
        refined, _ = pffm.self_attention(
            fused, model.attention, bias=d_hat,
            stream_threshold=cfg.stream_threshold, ln_eps=cfg.ln_eps,
        )
    fused_logits = model.fused_head(refined)
    img_logits = model.image_head(np.concatenate([refined, f_img], axis=0))

    rows, cols, _ = grid_cells(proj.u_feat, proj.v_feat, h, w)
    gathered = refined[:, rows, cols].T if len(proj) else np.zeros((0, cfg.c_v))
    return ViewResult(
        fused=refined, fill_point=fill, img_logits=img_logits, fused_logits=fused_logits,
        depth_diff=diff, align=align, gathered_index=proj.point_index, gathered=gathered,
        diagnostics=diag,
    )


def voxel_labels(grid: VoxelGrid, point_labels: np.ndarray) -> np.ndarray:
    """Majority label of each voxel's retained points (ties -> smaller class; all-ignore -> ignore)."""
    out = np.full(grid.n_occupied, losses.IGNORE, dtype=np.int64)
    for i, members in enumerate(grid.members):
        lab = point_labels[members]
        lab = lab[lab != losses.IGNORE]
        if lab.size:
            out[i] = int(np.argmax(np.bincount(lab)))
    return out


def _split_views(n: int) -> tuple[int, list[int]]:
    center = n // 2
    return center, [i for i in range(n) if i != center]


def run_fusion(
    features: list[np.ndarray],
    depths: list[np.ndarray],
    cloud: np.ndarray,
    cameras: list[CameraModel],
    config: PipelineConfig = PipelineConfig(),
    image_labels: list[np.ndarray] | None = None,
    point_labels: np.ndarray | None = None,
    model: Model | None = None,
) -> FusionResult:
    """Run both branches for ``n`` views; computes the loss stack when labels are given."""
    n = len(cameras)
    if not (len(features) == len(depths) == n):
        raise ValidationError(
            f"got {len(features)} feature maps, {len(depths)} depth maps, {n} cameras"
        )
    if n != config.n_views:
        raise ValidationError(f"config expects {config.n_views} views, got {n}")
    if image_labels is not None and len(image_labels) != n:
        raise ValidationError(f"got {len(image_labels)} label maps for {n} views")
    model = model or Model.seeded(config)
    with stage("point branch, input"):
        pts = as_cloud(cloud)
    n_pts = pts.shape[0]

    with stage("point branch, voxelization"):
        grid = assign_voxels(pts, config.voxel_config())
        featurize_voxels(grid, pts, channels=config.c_p)
        if grid.n_occupied and n_pts:
            point_feats = interpolate_points(grid, pts[:, :3], config.eps_voxel)
        else:
            point_feats = np.zeros((n_pts, config.c_p))

    def one(i: int) -> ViewResult:
        return _view_pass(i, features[i], depths[i], cameras[i], pts, point_feats, model, config)

    if config.workers > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            views = list(pool.map(one, range(n)))
    else:
        views = [one(i) for i in range(n)]

    # mean of refined image features over the views that see each point
    acc = np.zeros((n_pts, config.c_v))
    hits = np.zeros(n_pts)
    for v in views:
        acc[v.gathered_index] += v.gathered
        hits[v.gathered_index] += 1
    img_part = np.divide(acc, hits[:, None], out=np.zeros_like(acc), where=hits[:, None] > 0)
    point_in = np.concatenate([point_feats, img_part], axis=1)
    point_logits = model.point_head(point_in.T)
    voxel_logits = model.voxel_head(grid.features.T)

    result = FusionResult(
        views=views,
        point_logits=point_logits,
        voxel_logits=voxel_logits,
        point_features=point_in,
        voxels=grid,
        diagnostics={
            "points": n_pts,
            "occupied_voxels": grid.n_occupied,
            "points_seen_by_any_view": int((hits > 0).sum()),
            "views": [v.diagnostics for v in views],
        },
    )
    if image_labels is not None:
        result.losses = loss_report(result, image_labels, point_labels, config)
    return result


def loss_report(
    result: FusionResult,
    image_labels: list[np.ndarray],
    point_labels: np.ndarray | None,
    cfg: PipelineConfig,
) -> dict[str, float]:
    views = result.views
    n = len(views)
    per_view = []
    for i, (v, y) in enumerate(zip(views, image_labels)):
        with stage(f"view {i}, losses"):
            ce, lov = losses.segmentation_loss(v.img_logits, y)
            fce, flov = losses.segmentation_loss(v.fused_logits, y)
        per_view.append((ce, lov, fce, flov))
    center, sides = _split_views(n)
    align = cfg.align_weight * float(np.mean([v.align for v in views]))
    terms = losses.ImageLossTerms(
        center_ce=per_view[center][0],
        center_lovasz=per_view[center][1],
        align=align,
        fused_ce=float(np.mean([p[2] for p in per_view])),
        fused_lovasz=float(np.mean([p[3] for p in per_view])),
        side_ce=[per_view[i][0] for i in sides],
        side_lovasz=[per_view[i][1] for i in sides],
    )
    weights = losses.LossWeights(cfg.alpha1, cfg.alpha2)
    img_total = losses.total_image_loss(terms, weights)
    report = {
        "L_img_center": terms.center_ce,
        "L_img_lvcenter": terms.center_lovasz,
        "L_align": terms.align,
        "L_fused_img": terms.fused_ce,
        "L_fused_lovasz": terms.fused_lovasz if sides else 0.0,
        "L_img_side_ce_sum": float(np.sum(terms.side_ce)),
        "L_img_side_lovasz_sum": float(np.sum(terms.side_lovasz)),
        "L_img_total": img_total,
    }
    point_total = 0.0
    if point_labels is not None:
        y = np.asarray(point_labels).reshape(-1)
        if y.shape[0] != result.point_logits.shape[1]:
            raise ValidationError(
                f"{y.shape[0]} point labels for {result.point_logits.shape[1]} points"
            )
        if np.any(y != losses.IGNORE) and result.voxels.n_occupied:
            yv = voxel_labels(result.voxels, y)
            if np.any(yv != losses.IGNORE):
                with stage("point branch, losses"):
                    p_ce, p_lov = losses.segmentation_loss(result.point_logits, y)
                    v_ce, v_lov = losses.segmentation_loss(result.voxel_logits, yv)
                report.update(L_point=p_ce + p_lov, L_voxel=v_ce + v_lov)
                point_total = report["L_point"] + report["L_voxel"]
        else:
            log.info("no labelled points or voxels; point losses skipped")
    report["L_point_total"] = point_total
    report["L_total"] = losses.total_loss(img_total, point_total)
    return report
