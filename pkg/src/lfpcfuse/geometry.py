"""Pinhole projection of LiDAR points onto the image and feature planes.

Axis convention used throughout the package:

    u  -> horizontal pixel coordinate (column), scaled to the feature grid by w / W
    v  -> vertical pixel coordinate (row),      scaled to the feature grid by h / H

Grid cells are addressed ``[row, col]`` and a projection lands in cell
``(round(v), round(u))`` with round-half-up, clamped to the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Literal

import numpy as np

from lfpcfuse.errors import ValidationError

# camera-frame depth at or below this is treated as behind the camera
MIN_DEPTH = 1e-9

Plane = Literal["image", "feature"]


@dataclass(frozen=True)
class CameraModel:
    """Intrinsics ``K`` (3x4), extrinsics ``T`` (4x4, LiDAR -> camera) and grid sizes."""

    K: np.ndarray
    T: np.ndarray
    H: int
    W: int
    h: int
    w: int

    def __post_init__(self) -> None:
        K = np.asarray(self.K, dtype=np.float64)
        T = np.asarray(self.T, dtype=np.float64)
        if K.shape != (3, 4):
            raise ValidationError(f"K must be 3x4, got {K.shape}")
        if T.shape != (4, 4):
            raise ValidationError(f"T must be 4x4, got {T.shape}")
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(T))):
            raise ValidationError("camera matrices must be finite")
        if np.max(np.abs(T[3] - [0.0, 0.0, 0.0, 1.0])) > 1e-12:
            raise ValidationError(f"T bottom row must be (0, 0, 0, 1), got {T[3].tolist()}")
        for name in ("H", "W", "h", "w"):
            if int(getattr(self, name)) != getattr(self, name):
                raise ValidationError(f"{name} must be an integer")
        if not (self.H >= self.h >= 1 and self.W >= self.w >= 1):
            raise ValidationError(
                f"need H >= h >= 1 and W >= w >= 1, got H={self.H} W={self.W} h={self.h} w={self.w}"
            )
        K.setflags(write=False)
        T.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "T", T)

    @classmethod
    def from_intrinsics(
        cls,
        fx: float,
        fy: float,
        cx: float,
        cy: float,
        H: int,
        W: int,
        h: int,
        w: int,
        T: np.ndarray | None = None,
    ) -> "CameraModel":
        K = np.array([[fx, 0.0, cx, 0.0], [0.0, fy, cy, 0.0], [0.0, 0.0, 1.0, 0.0]])
        return cls(K=K, T=np.eye(4) if T is None else T, H=H, W=W, h=h, w=w)

    def grid_shape(self, plane: Plane = "feature") -> tuple[int, int]:
        if plane == "image":
            return self.H, self.W
        if plane == "feature":
            return self.h, self.w
        raise ValidationError(f"unknown plane {plane!r}")

    @property
    def projection_matrix(self) -> np.ndarray:
        return self.K @ self.T


@dataclass(frozen=True)
class Projection:
    point_index: int
    u: float
    v: float
    u_feat: float
    v_feat: float
    depth: float


@dataclass(frozen=True)
class Projections:
    """Struct-of-arrays view of every visible projection of a cloud."""

    point_index: np.ndarray
    u: np.ndarray
    v: np.ndarray
    u_feat: np.ndarray
    v_feat: np.ndarray
    depth: np.ndarray

    def __len__(self) -> int:
        return int(self.point_index.shape[0])

    def __getitem__(self, i: int) -> Projection:
        return Projection(
            int(self.point_index[i]),
            float(self.u[i]),
            float(self.v[i]),
            float(self.u_feat[i]),
            float(self.v_feat[i]),
            float(self.depth[i]),
        )

    def __iter__(self) -> Iterator[Projection]:
        for i in range(len(self)):
            yield self[i]

    def coords(self, plane: Plane = "feature") -> tuple[np.ndarray, np.ndarray]:
        """Return ``(col, row)`` real coordinates on the requested plane."""
        if plane == "image":
            return self.u, self.v
        if plane == "feature":
            return self.u_feat, self.v_feat
        raise ValidationError(f"unknown plane {plane!r}")

    @classmethod
    def empty(cls) -> "Projections":
        z = np.zeros(0)
        return cls(np.zeros(0, dtype=np.int64), z, z, z, z, z)


@dataclass
class SparseGrid:
    """``height x width`` grid of optional scalars; invalid cells hold 0."""

    values: np.ndarray
    mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValidationError(f"sparse grid values must be 2-D, got shape {self.values.shape}")
        if self.mask is None:
            self.mask = np.zeros(self.values.shape, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.values.shape:
            raise ValidationError(
                f"mask shape {self.mask.shape} differs from values shape {self.values.shape}"
            )
        self.values = np.where(self.mask, self.values, 0.0)

    @classmethod
    def empty(cls, height: int, width: int) -> "SparseGrid":
        return cls(np.zeros((height, width)), np.zeros((height, width), dtype=bool))

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def count(self) -> int:
        return int(self.mask.sum())


def as_cloud(cloud: np.ndarray) -> np.ndarray:
    """Validate an ``N x 4`` (or ``N x 3``) cloud and return it as float64 ``N x 4``."""
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim == 1 and pts.size == 0:
        pts = pts.reshape(0, 4)
    if pts.ndim != 2 or pts.shape[1] not in (3, 4):
        raise ValidationError(f"point cloud must be N x 4, got shape {pts.shape}")
    if pts.shape[1] == 3:
        pts = np.hstack([pts, np.zeros((pts.shape[0], 1))])
    if not np.all(np.isfinite(pts)):
        raise ValidationError("point cloud contains non-finite values")
    return pts


def round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


def grid_cells(
    cols: np.ndarray, rows: np.ndarray, height: int, width: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Round real coordinates to cells; returns ``(row, col, clamped)``."""
    c = round_half_up(cols)
    r = round_half_up(rows)
    rc = np.clip(r, 0, height - 1)
    cc = np.clip(c, 0, width - 1)
    clamped = (rc != r) | (cc != c)
    return rc, cc, clamped


def _project(camera: CameraModel, xyz: np.ndarray) -> tuple[np.ndarray, ...]:
    # explicit column sums instead of matmul so results do not depend on batch size
    hom = np.hstack([xyz, np.ones((xyz.shape[0], 1))])
    cam = sum(hom[:, j:j + 1] * camera.T[:, j] for j in range(4))
    img = sum(cam[:, j:j + 1] * camera.K[:, j] for j in range(4))
    z_cam = cam[:, 2]
    s = img[:, 2]
    ok = (z_cam > MIN_DEPTH) & (s > MIN_DEPTH)
    safe = np.where(ok, s, 1.0)
    u = img[:, 0] / safe
    v = img[:, 1] / safe
    ok &= (u >= 0.0) & (u < camera.W) & (v >= 0.0) & (v < camera.H)
    return ok, u, v, z_cam


def project_point(camera: CameraModel, point) -> Projection | None:
    """Project one LiDAR-frame point; ``None`` when behind the camera or out of frame."""
    xyz = np.asarray(point, dtype=np.float64).reshape(-1)[:3].reshape(1, 3)
    if not np.all(np.isfinite(xyz)):
        raise ValidationError("point coordinates must be finite")
    ok, u, v, z = _project(camera, xyz)
    if not ok[0]:
        return None
    uu, vv = float(u[0]), float(v[0])
    return Projection(
        point_index=0,
        u=uu,
        v=vv,
        u_feat=uu * camera.w / camera.W,
        v_feat=vv * camera.h / camera.H,
        depth=float(z[0]),
    )


def project_cloud(camera: CameraModel, cloud: np.ndarray) -> Projections:
    """Project every point of ``cloud``; keeps visible ones in ascending index order."""
    pts = as_cloud(cloud)
    if pts.shape[0] == 0:
        return Projections.empty()
    ok, u, v, z = _project(camera, pts[:, :3])
    idx = np.flatnonzero(ok)
    u, v = u[idx], v[idx]
    return Projections(
        point_index=idx.astype(np.int64),
        u=u,
        v=v,
        u_feat=u * camera.w / camera.W,
        v_feat=v * camera.h / camera.H,
        depth=z[idx],
    )


def nearest_winners(
    rows: np.ndarray, cols: np.ndarray, depth: np.ndarray, width: int
) -> np.ndarray:
    """Indices (into the inputs) of the smallest-depth entry per cell.

    Equal depths resolve to the earliest entry.
    """
    if rows.size == 0:
        return np.zeros(0, dtype=np.int64)
    flat = rows * width + cols
    order = np.lexsort((np.arange(flat.size), depth, flat))
    first = np.ones(order.size, dtype=bool)
    first[1:] = flat[order][1:] != flat[order][:-1]
    return order[first]


def sparse_depth_with_owner(
    camera: CameraModel, cloud: np.ndarray, grid: Plane = "image"
) -> tuple[SparseGrid, np.ndarray]:
    """Like :func:`build_sparse_depth_map`, also returning the winning point index per cell (-1 if none)."""
    height, width = camera.grid_shape(grid)
    owner = np.full((height, width), -1, dtype=np.int64)
    proj = project_cloud(camera, cloud)
    if len(proj) == 0:
        return SparseGrid.empty(height, width), owner
    cols, rows = proj.coords(grid)
    r, c, _ = grid_cells(cols, rows, height, width)
    keep = nearest_winners(r, c, proj.depth, width)
    values = np.zeros((height, width))
    mask = np.zeros((height, width), dtype=bool)
    values[r[keep], c[keep]] = proj.depth[keep]
    mask[r[keep], c[keep]] = True
    owner[r[keep], c[keep]] = proj.point_index[keep]
    return SparseGrid(values, mask), owner


def build_sparse_depth_map(
    camera: CameraModel, cloud: np.ndarray, grid: Plane = "image"
) -> SparseGrid:
    """Scatter camera-frame depths of visible points onto the image or feature plane.

    When several points land in the same cell the nearest one is kept.
    """
    return sparse_depth_with_owner(camera, cloud, grid)[0]


def unproject(camera: CameraModel, u, v, depth) -> np.ndarray:
    """Invert the projection for pixel ``(u, v)`` at camera-frame ``depth``.

    Exact when the last row of ``K`` is ``(0, 0, 1, 0)``.
    """
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    d = np.atleast_1d(np.asarray(depth, dtype=np.float64))
    rhs = np.stack([u * d, v * d, d], axis=0) - camera.K[:, 3:4]
    cam = np.linalg.solve(camera.K[:, :3], rhs)
    hom = np.vstack([cam, np.ones((1, cam.shape[1]))])
    world = np.linalg.solve(camera.T, hom)
    return world[:3].T
