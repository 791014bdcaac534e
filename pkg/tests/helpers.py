"""Shared builders for the test modules."""

from __future__ import annotations

import numpy as np

from lfpcfuse import ddpm, synth
from lfpcfuse.geometry import CameraModel, sparse_depth_with_owner
from lfpcfuse.pipeline import PipelineConfig


def random_camera(rng: np.random.Generator, H=96, W=128, h=24, w=32) -> CameraModel:
    """Pinhole camera with a random rigid LiDAR -> camera transform."""
    angles = rng.uniform(-0.3, 0.3, 3)
    cx, cy, cz = np.cos(angles)
    sx, sy, sz = np.sin(angles)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    T = np.eye(4)
    T[:3, :3] = Rz @ Ry @ Rx
    T[:3, 3] = rng.uniform(-1, 1, 3)
    f = rng.uniform(80, 120)
    return CameraModel.from_intrinsics(f, f * rng.uniform(0.9, 1.1), W / 2, H / 2, H, W, h, w, T)


def frustum_points(rng: np.random.Generator, camera: CameraModel, n: int) -> np.ndarray:
    """``n`` LiDAR-frame points that project strictly inside the image."""
    u = rng.uniform(0, camera.W, n)
    v = rng.uniform(0, camera.H, n)
    d = rng.uniform(1.0, 80.0, n)
    K3 = camera.K[:, :3]
    cam = np.linalg.solve(K3, np.stack([u * d, v * d, d]))
    world = np.linalg.solve(camera.T, np.vstack([cam, np.ones(n)]))
    return np.hstack([world[:3].T, rng.uniform(0, 1, (n, 1))])


def small_config(n_views: int = 1, c: int = 8, **kw) -> PipelineConfig:
    return PipelineConfig(n_views=n_views, c_img=c, c_p=c, c_q=8, c_k=8, c_v=8, **kw)


def scene_inputs(scene: synth.Scene, channels: int = 48):
    """Features, predicted depths, cameras, image labels and the labelled sweep of a scene."""
    cams = scene.camera_models()
    views = [synth.render_view(scene, c, "feature") for c in cams]
    feats = [synth.toy_image_features(v, channels) for v in views]
    depths = [synth.predicted_depth(v) for v in views]
    labels = [v.labels for v in views]
    sweep = synth.sample_lidar_labeled(scene)
    return feats, depths, cams, labels, sweep


def occlusion_contrast(fix: synth.OcclusionFixture) -> tuple[float, float]:
    """Mean |D_diff| over cells won by target LiDAR points, and over all other LiDAR cells."""
    scene = fix.scene
    cam = scene.camera_models()[0]
    sweep = synth.sample_lidar_labeled(scene)
    sparse, owner = sparse_depth_with_owner(cam, sweep.cloud, "feature")
    pred = synth.predicted_depth(synth.render_view(scene, cam, "feature"))
    diff = ddpm.log_depth_difference(pred, sparse)
    prim = np.where(owner >= 0, sweep.primitive[np.maximum(owner, 0)], -1)
    target = sparse.mask & (prim == fix.target)
    background = sparse.mask & (prim != fix.target)
    a = np.abs(diff.values)
    return float(a[target].mean()), float(a[background].mean()) if background.any() else 0.0
