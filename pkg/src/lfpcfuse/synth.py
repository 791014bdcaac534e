"""Synthetic multi-camera + LiDAR scenes built from axis-aligned boxes and ground planes.

World frame: ``x`` right, ``y`` forward, ``z`` up.  The LiDAR frame is the
world frame translated to the LiDAR origin (no rotation).  Cameras look down
``+y`` with the usual optical frame (``x`` right, ``y`` down, ``z`` forward).

Scene description language, one directive per line (``#`` starts a comment)::

    BOX    cx cy cz sx sy sz class          # centre and full edge lengths, metres
    PLANE  z class                          # horizontal plane at height z
    CAMERA fx fy cx cy H W h w x y z        # one camera centred at (x, y, z)
    RIG    fx fy cx cy H W h w x y z [rows cols baseline]
    LIDAR  x y z az_min az_max n_az el_min el_max n_el [max_range]

Azimuth is measured from ``+y`` towards ``+x`` and elevation upwards, both in
degrees.  ``RIG`` expands to a ``rows x cols`` camera grid (default 3 x 3 at
0.3 m) centred on ``(x, y, z)`` in the ``x``/``z`` plane, row-major from the
top-left camera.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lfpcfuse import io
from lfpcfuse.errors import FormatError, ValidationError
from lfpcfuse.geometry import CameraModel, Plane
from lfpcfuse.losses import IGNORE, NUM_CLASSES

# optical frame from world frame
CAM_FROM_WORLD = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
HIT_EPS = 1e-9
FAR_DEPTH = 200.0


@dataclass(frozen=True)
class Box:
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    label: int

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center) - 0.5 * np.asarray(self.size)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center) + 0.5 * np.asarray(self.size)

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Ray parameter of the first hit in front of the origin (``inf`` on a miss)."""
        lo, hi = self.lo, self.hi
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1 = (lo - origins) * inv
            t2 = (hi - origins) * inv
        tmin = np.minimum(t1, t2)
        tmax = np.maximum(t1, t2)
        parallel = dirs == 0.0
        inside = (origins >= lo) & (origins <= hi)
        tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
        tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
        near = tmin.max(axis=1)
        far = tmax.min(axis=1)
        hit = (near <= far) & (far > HIT_EPS)
        t = np.where(near > HIT_EPS, near, far)
        return np.where(hit, t, np.inf)

    def surface_distance(self, p: np.ndarray) -> np.ndarray:
        """Unsigned distance from points to the box surface."""
        lo, hi = self.lo, self.hi
        outside = np.maximum(np.maximum(lo - p, p - hi), 0.0)
        d_out = np.sqrt(np.sum(outside**2, axis=-1))
        d_in = np.min(np.minimum(p - lo, hi - p), axis=-1)
        inside = np.all((p >= lo) & (p <= hi), axis=-1)
        return np.where(inside, d_in, d_out)


@dataclass(frozen=True)
class GroundPlane:
    z: float
    label: int

    def intersect(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.z - origins[:, 2]) / dz
        return np.where((dz != 0.0) & (t > HIT_EPS), t, np.inf)

    def surface_distance(self, p: np.ndarray) -> np.ndarray:
        return np.abs(p[..., 2] - self.z)


Primitive = Box | GroundPlane


@dataclass(frozen=True)
class LidarSpec:
    origin: tuple[float, float, float] = (0.0, 0.0, 2.0)
    az_min: float = -40.0
    az_max: float = 40.0
    n_az: int = 161
    el_min: float = -20.0
    el_max: float = 5.0
    n_el: int = 51
    max_range: float = 150.0

    def directions(self) -> np.ndarray:
        az = np.deg2rad(np.linspace(self.az_min, self.az_max, self.n_az))
        el = np.deg2rad(np.linspace(self.el_min, self.el_max, self.n_el))
        E, A = np.meshgrid(el, az, indexing="ij")
        return np.stack(
            [np.cos(E) * np.sin(A), np.cos(E) * np.cos(A), np.sin(E)], axis=-1
        ).reshape(-1, 3)


@dataclass(frozen=True)
class CameraSpec:
    fx: float
    fy: float
    cx: float
    cy: float
    H: int
    W: int
    h: int
    w: int
    position: tuple[float, float, float]

    def model(self, lidar_origin) -> CameraModel:
        R = CAM_FROM_WORLD
        T = np.eye(4)
        T[:3, :3] = R
        T[:3, 3] = R @ (np.asarray(lidar_origin, dtype=np.float64) - np.asarray(self.position))
        return CameraModel.from_intrinsics(
            self.fx, self.fy, self.cx, self.cy, self.H, self.W, self.h, self.w, T=T
        )


@dataclass
class Scene:
    primitives: list[Primitive] = field(default_factory=list)
    cameras: list[CameraSpec] = field(default_factory=list)
    lidar: LidarSpec = field(default_factory=LidarSpec)

    def __post_init__(self) -> None:
        for p in self.primitives:
            if not 0 <= p.label < NUM_CLASSES:
                raise ValidationError(f"primitive class {p.label} outside [0, {NUM_CLASSES})")

    def validate(self) -> None:
        if not self.cameras:
            raise ValidationError("scene needs at least one camera")

    def camera_models(self) -> list[CameraModel]:
        return [c.model(self.lidar.origin) for c in self.cameras]

    def cast(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """``(n_primitives, n_rays)`` hit parameters."""
        if not self.primitives:
            return np.full((0, origins.shape[0]), np.inf)
        return np.stack([p.intersect(origins, dirs) for p in self.primitives])


def nearest_hits(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest primitive per ray (-1 on a miss; ties go to the earlier primitive)."""
    if t.shape[0] == 0:
        n = t.shape[1]
        return np.full(n, -1, dtype=np.int64), np.full(n, np.inf)
    idx = np.argmin(t, axis=0)
    tt = t[idx, np.arange(t.shape[1])]
    return np.where(np.isfinite(tt), idx, -1), tt


# -- rendering -----------------------------------------------------------------


@dataclass
class RenderedView:
    depth: np.ndarray  # camera-frame z, 0 where nothing is hit
    labels: np.ndarray  # uint8, IGNORE where nothing is hit
    primitive: np.ndarray  # int64, -1 where nothing is hit
    visible_fraction: np.ndarray  # per primitive, NaN when outside the view
    occlusion_flags: np.ndarray  # per primitive


def camera_rays(scene: Scene, camera: CameraModel, u: np.ndarray, v: np.ndarray):
    """World-frame origins/directions for pixel coordinates; direction z_cam component is 1.

    Assumes the last column of ``K`` is zero.
    """
    R = camera.T[:3, :3]
    t = camera.T[:3, 3]
    pix = np.stack([u, v, np.ones_like(u)], axis=0)
    d_cam = np.linalg.solve(camera.K[:, :3], pix)
    d_cam = d_cam / d_cam[2]
    dirs = (R.T @ d_cam).T
    center = -R.T @ t + np.asarray(scene.lidar.origin)
    return np.broadcast_to(center, dirs.shape), dirs


def cast_pixels(scene: Scene, camera: CameraModel, u, v) -> tuple[np.ndarray, np.ndarray]:
    """Camera depth and primitive index seen through arbitrary (sub)pixel coordinates."""
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    origins, dirs = camera_rays(scene, camera, u, v)
    prim, t = nearest_hits(scene.cast(origins, dirs))
    return np.where(prim >= 0, t, 0.0), prim


def _grid_pixels(camera: CameraModel, plane: Plane) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = camera.grid_shape(plane)
    r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    if plane == "feature":
        return c.ravel() * camera.W / camera.w, r.ravel() * camera.H / camera.h
    return c.ravel().astype(np.float64), r.ravel().astype(np.float64)


def render_view(scene: Scene, camera: CameraModel, grid: Plane = "image") -> RenderedView:
    """Ray-cast one ray per cell (through the cell's sample point) and keep the nearest hit.

    A primitive is flagged occluded when fewer than half of the cells it would
    cover on its own are won by it.
    """
    rows, cols = camera.grid_shape(grid)
    u, v = _grid_pixels(camera, grid)
    origins, dirs = camera_rays(scene, camera, u, v)
    t = scene.cast(origins, dirs)
    prim, tt = nearest_hits(t)
    depth = np.where(prim >= 0, tt, 0.0)
    classes = np.array([p.label for p in scene.primitives] + [IGNORE], dtype=np.uint8)
    labels = classes[prim]  # -1 picks IGNORE
    alone = np.isfinite(t).sum(axis=1)
    won = np.bincount(prim[prim >= 0], minlength=len(scene.primitives))
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(alone > 0, won / np.maximum(alone, 1), np.nan)
    flags = (alone > 0) & (frac < 0.5)
    return RenderedView(
        depth=depth.reshape(rows, cols),
        labels=labels.reshape(rows, cols),
        primitive=prim.reshape(rows, cols),
        visible_fraction=frac,
        occlusion_flags=flags,
    )


# -- LiDAR -----------------------------------------------------------------------


def reflectance(label) -> np.ndarray:
    return (np.asarray(label, dtype=np.float64) + 1.0) / 16.0


@dataclass
class LidarSweep:
    cloud: np.ndarray  # (N, 4) LiDAR frame
    labels: np.ndarray  # (N,) uint8
    primitive: np.ndarray  # (N,) int64


def sample_lidar_labeled(scene: Scene, jitter: float = 0.0, seed: int = 0) -> LidarSweep:
    """Cast the LiDAR's angular grid; ``jitter`` adds Gaussian range noise in metres."""
    spec = scene.lidar
    dirs = spec.directions()
    origins = np.broadcast_to(np.asarray(spec.origin, dtype=np.float64), dirs.shape)
    prim, t = nearest_hits(scene.cast(origins, dirs))
    ok = (prim >= 0) & (t <= spec.max_range)
    rng_t = t[ok]
    if jitter > 0:
        rng_t = np.maximum(rng_t + jitter * np.random.default_rng(seed).standard_normal(rng_t.size), 0.0)
    xyz = dirs[ok] * rng_t[:, None]
    labels = np.array([scene.primitives[i].label for i in prim[ok]], dtype=np.uint8)
    cloud = np.hstack([xyz, reflectance(labels)[:, None]]) if xyz.size else np.zeros((0, 4))
    return LidarSweep(cloud=cloud, labels=labels, primitive=prim[ok].astype(np.int64))


def sample_lidar(scene: Scene, jitter: float = 0.0, seed: int = 0) -> np.ndarray:
    return sample_lidar_labeled(scene, jitter, seed).cloud


# -- stand-ins for the learned backbones ----------------------------------------


def toy_image_features(view: RenderedView, channels: int = 48, seed: int = 7) -> np.ndarray:
    """Deterministic per-class embedding plus a depth-dependent sinusoid, ``(channels, h, w)``."""
    table = np.random.default_rng(seed).standard_normal((NUM_CLASSES + 1, channels))
    cls = np.where(view.labels == IGNORE, NUM_CLASSES, view.labels).astype(np.int64)
    feats = table[cls]  # (h, w, c)
    freq = 1.0 / (1.0 + np.arange(channels))
    feats = feats + 0.1 * np.sin(view.depth[..., None] * freq)
    return np.moveaxis(feats, -1, 0)


def predicted_depth(view: RenderedView, far: float = FAR_DEPTH, jitter: float = 0.0, seed: int = 0) -> np.ndarray:
    """Toy depth predictor: rendered camera depth, ``far`` where nothing is hit, optional noise."""
    d = np.where(view.primitive >= 0, view.depth, far)
    if jitter > 0:
        d = d + jitter * np.random.default_rng(seed).standard_normal(d.shape)
    return np.maximum(d, 0.1)


def plane_depth_prediction(
    camera: CameraModel, lidar_origin=(0.0, 0.0, 0.0), ground_z: float = 0.0,
    far: float = FAR_DEPTH, grid: Plane = "feature",
) -> np.ndarray:
    """Depth of a flat ground plane (``far`` above the horizon) as a prior-only prediction."""
    scene = Scene([GroundPlane(ground_z, 0)], lidar=LidarSpec(origin=tuple(lidar_origin)))
    view = render_view(scene, camera, grid)
    return np.minimum(predicted_depth(view, far), far)


# -- scene language ---------------------------------------------------------------


def rig_cameras(
    fx, fy, cx, cy, H, W, h, w, center, rows: int = 3, cols: int = 3, baseline: float = 0.3
) -> list[CameraSpec]:
    out = []
    for i in range(rows):
        for j in range(cols):
            x = center[0] + (j - (cols - 1) / 2) * baseline
            z = center[2] - (i - (rows - 1) / 2) * baseline
            out.append(CameraSpec(fx, fy, cx, cy, int(H), int(W), int(h), int(w), (x, center[1], z)))
    return out


def _nums(parts: list[str], lineno: int, count: tuple[int, ...]) -> list[float]:
    if len(parts) not in count:
        raise FormatError(f"line {lineno}: {parts[0]} expects {' or '.join(map(str, count))} values, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise FormatError(f"line {lineno}: {exc}") from None


def parse_scene(text: str) -> Scene:
    prims: list[Primitive] = []
    cams: list[CameraSpec] = []
    lidar = LidarSpec()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *parts = line.split()
        tag = tag.upper()
        if tag == "BOX":
            v = _nums(parts, lineno, (7,))
            prims.append(Box(tuple(v[0:3]), tuple(v[3:6]), int(v[6])))
            if min(v[3:6]) <= 0:
                raise FormatError(f"line {lineno}: box sizes must be positive")
        elif tag == "PLANE":
            v = _nums(parts, lineno, (2,))
            prims.append(GroundPlane(v[0], int(v[1])))
        elif tag == "CAMERA":
            v = _nums(parts, lineno, (11,))
            cams.append(CameraSpec(*v[:4], *(int(x) for x in v[4:8]), tuple(v[8:11])))
        elif tag == "RIG":
            v = _nums(parts, lineno, (11, 14))
            extra = {} if len(v) == 11 else {"rows": int(v[11]), "cols": int(v[12]), "baseline": v[13]}
            cams.extend(rig_cameras(*v[:4], *(int(x) for x in v[4:8]), tuple(v[8:11]), **extra))
        elif tag == "LIDAR":
            v = _nums(parts, lineno, (9, 10))
            lidar = LidarSpec(
                tuple(v[0:3]), v[3], v[4], int(v[5]), v[6], v[7], int(v[8]),
                *([v[9]] if len(v) == 10 else []),
            )
        else:
            raise FormatError(f"line {lineno}: unknown directive {tag!r}")
    return Scene(prims, cams, lidar)


def format_scene(scene: Scene) -> str:
    def f(x) -> str:
        return repr(float(x))

    lines = []
    for p in scene.primitives:
        if isinstance(p, Box):
            lines.append("BOX " + " ".join(f(x) for x in (*p.center, *p.size)) + f" {p.label}")
        else:
            lines.append(f"PLANE {f(p.z)} {p.label}")
    for c in scene.cameras:
        lines.append(
            "CAMERA " + " ".join(f(x) for x in (c.fx, c.fy, c.cx, c.cy))
            + f" {c.H} {c.W} {c.h} {c.w} " + " ".join(f(x) for x in c.position)
        )
    L = scene.lidar
    lines.append(
        "LIDAR " + " ".join(f(x) for x in L.origin)
        + f" {f(L.az_min)} {f(L.az_max)} {L.n_az} {f(L.el_min)} {f(L.el_max)} {L.n_el} {f(L.max_range)}"
    )
    return "\n".join(lines) + "\n"


# -- canned scenes -------------------------------------------------------------------

DEFAULT_INTRINSICS = dict(fx=100.0, fy=100.0, cx=64.0, cy=48.0, H=96, W=128, h=24, w=32)
CAMERA_HEIGHT = 1.6


def view_cameras(n_views: int, center=(0.0, 0.0, CAMERA_HEIGHT), baseline: float = 0.3) -> list[CameraSpec]:
    """``n_views`` cameras: a 3 x 3 rig for 9, one camera for 1, else a horizontal row."""
    if n_views < 1:
        raise ValidationError("n_views must be >= 1")
    if n_views == 9:
        rows, cols = 3, 3
    else:
        rows, cols = 1, n_views
    return rig_cameras(**DEFAULT_INTRINSICS, center=center, rows=rows, cols=cols, baseline=baseline)


def street_scene(n_views: int = 9, seed: int = 0) -> Scene:
    """Road, facade and a handful of randomly placed boxes."""
    rng = np.random.default_rng(seed)
    prims: list[Primitive] = [
        GroundPlane(0.0, 0),
        Box((0.0, 70.0, 10.0), (200.0, 1.0, 20.0), 1),
    ]
    for _ in range(5):
        label = int(rng.integers(2, NUM_CLASSES))
        sx, sy, sz = rng.uniform([0.6, 0.6, 0.8], [2.5, 4.5, 2.5])
        x = rng.uniform(-10, 10)
        y = rng.uniform(12, 45)
        prims.append(Box((x, y, sz / 2), (sx, sy, sz), label))
    lidar = LidarSpec(origin=(0.0, 0.0, 2.0), az_min=-40, az_max=40, n_az=161,
                      el_min=-16, el_max=6, n_el=45, max_range=120)
    return Scene(prims, view_cameras(n_views), lidar)


@dataclass
class OcclusionFixture:
    scene: Scene
    target: int  # primitive index hidden from the camera but scanned by the LiDAR
    occluder: int


def consistent_fixture(seed: int = 0, n_views: int = 1) -> Scene:
    """A single fronto-parallel wall filling every view: LiDAR and camera depths agree."""
    rng = np.random.default_rng(seed)
    dist = rng.uniform(10.0, 60.0)
    label = int(rng.integers(0, NUM_CLASSES))
    lidar = LidarSpec(
        origin=(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(1.5, 2.5)),
        az_min=-35, az_max=35, n_az=141, el_min=-25, el_max=25, n_el=101, max_range=150,
    )
    wall = Box((0.0, dist + 0.5, 0.0), (2000.0, 1.0, 2000.0), label)
    return Scene([wall], view_cameras(n_views), lidar)


def occlusion_fixture(seed: int = 0, n_views: int = 1, max_tries: int = 200) -> OcclusionFixture:
    """Low wall in front of the camera, target behind it, billboard, out-of-range backdrop.

    The LiDAR sits above the camera and its lowest beam clears the wall, so it
    scans the target while the camera sees only the wall there.
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        wall_y = rng.uniform(5.5, 7.0)
        wall_top = rng.uniform(2.0, 2.3)
        wall_half = rng.uniform(2.5, 3.5)
        tgt_y = rng.uniform(20.0, 28.0)
        tgt_half = rng.uniform(1.0, 1.6)
        tgt_x = rng.uniform(-0.5, 0.5)
        board_y = rng.uniform(30.0, 36.0)
        board_bottom = rng.uniform(5.0, 6.0)
        lidar_z = rng.uniform(3.4, 3.8)
        max_range = 45.0
        # lowest beam passes over the wall's top edge with margin
        el_min = -math.degrees(math.atan((lidar_z - wall_top - 0.3) / (wall_y + 0.3)))
        prims: list[Primitive] = [
            Box((0.0, wall_y + 0.15, wall_top / 2), (2 * wall_half, 0.3, wall_top), 2),
            Box((tgt_x, tgt_y + 0.5, 1.8), (2 * tgt_half, 1.0, 2.6), 4),
            Box((0.0, board_y + 0.15, board_bottom + 5.0), (80.0, 0.3, 10.0), 7),
            Box((0.0, 95.0, 0.0), (600.0, 1.0, 200.0), 1),
        ]
        lidar = LidarSpec(origin=(0.0, 0.0, lidar_z), az_min=-30, az_max=30, n_az=241,
                          el_min=el_min, el_max=12.0, n_el=81, max_range=max_range)
        scene = Scene(prims, view_cameras(n_views), lidar)
        sweep = sample_lidar_labeled(scene)
        if np.any(sweep.primitive == 0) or np.sum(sweep.primitive == 1) < 10:
            continue
        if any(render_view(scene, cam, "feature").visible_fraction[1] > 0 for cam in scene.camera_models()):
            continue
        return OcclusionFixture(scene, target=1, occluder=0)
    raise ValidationError(f"no valid occlusion layout after {max_tries} draws (seed {seed})")


# -- dataset directories ------------------------------------------------------------



def write_dataset(
    out_dir, scene: Scene, channels: int = 48, depth_jitter: float = 0.0, seed: int = 0
) -> Path:
    """Render every camera and sweep the LiDAR into a dataset directory.

    Layout::

        scene.txt  cloud.lfpc  point_labels.lflm  manifest.json
        view_00/calib.txt features.lffm depth.lffm labels.lflm
        ...
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene.validate()
    (out / "scene.txt").write_text(format_scene(scene))
    sweep = sample_lidar_labeled(scene, jitter=depth_jitter, seed=seed)
    io.save_cloud(out / "cloud.lfpc", sweep.cloud.astype(np.float32))
    io.save_label_map(out / "point_labels.lflm", sweep.labels[None])
    for i, cam in enumerate(scene.camera_models()):
        vdir = out / f"view_{i:02d}"
        vdir.mkdir(exist_ok=True)
        view = render_view(scene, cam, "feature")
        io.save_camera(vdir / "calib.txt", cam)
        io.save_feature_map(vdir / "features.lffm", toy_image_features(view, channels).astype(np.float32))
        io.save_feature_map(vdir / "depth.lffm", predicted_depth(view)[None].astype(np.float32))
        io.save_label_map(vdir / "labels.lflm", view.labels)
    manifest = {
        "n_views": len(scene.cameras),
        "n_points": int(sweep.cloud.shape[0]),
        "channels": channels,
        "seed": seed,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


@dataclass
class Dataset:
    cloud: np.ndarray
    cameras: list[CameraModel]
    features: list[np.ndarray]
    depths: list[np.ndarray]
    labels: list[np.ndarray] | None
    point_labels: np.ndarray | None


def read_dataset(path, depth_source: str = "file") -> Dataset:
    """Load a dataset directory written by :func:`write_dataset` (or laid out the same way).

    ``depth_source`` is ``"file"`` (each view's ``depth.lffm``) or ``"plane"``
    (ground-plane prior rendered from the calibration).
    """
    root = Path(path)
    vdirs = sorted(p for p in root.glob("view_*") if p.is_dir())
    if not vdirs:
        raise FormatError(f"{root}: no view_* directories")
    cloud = io.load_cloud(root / "cloud.lfpc")
    cams, feats, depths, labels = [], [], [], []
    for vdir in vdirs:
        cam = io.load_camera(vdir / "calib.txt")
        cams.append(cam)
        feats.append(io.load_feature_map(vdir / "features.lffm"))
        if depth_source == "file":
            depths.append(io.load_feature_map(vdir / "depth.lffm")[0])
        elif depth_source == "plane":
            lidar_z = _lidar_height(root)
            depths.append(plane_depth_prediction(cam, (0.0, 0.0, lidar_z)))
        else:
            raise ValidationError(f"unknown depth source {depth_source!r}")
        lab = vdir / "labels.lflm"
        labels.append(io.load_label_map(lab) if lab.exists() else None)
    pl = root / "point_labels.lflm"
    point_labels = io.load_label_map(pl)[0] if pl.exists() else None
    have_labels = all(x is not None for x in labels)
    return Dataset(cloud, cams, feats, depths, labels if have_labels else None, point_labels)


def _lidar_height(root: Path) -> float:
    scene_file = root / "scene.txt"
    if scene_file.exists():
        return float(parse_scene(scene_file.read_text()).lidar.origin[2])
    return 0.0
