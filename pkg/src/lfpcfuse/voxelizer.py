"""Voxel assignment of a point cloud and inverse-distance feature interpolation back to points."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from lfpcfuse.errors import FormatError, ValidationError
from lfpcfuse.geometry import as_cloud
from lfpcfuse.knn import inverse_distance_weights, nearest_k

EPS = 1e-8
NEIGHBORS = 3

Encoder = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class VoxelGridConfig:
    resolution: float = 0.1
    bounds_min: tuple[float, float, float] = (-50.0, 6.0, -7.0)
    bounds_max: tuple[float, float, float] = (50.0, 106.0, 11.0)
    max_points_per_voxel: int | None = 5

    def __post_init__(self) -> None:
        if not self.resolution > 0:
            raise ValidationError(f"voxel resolution must be positive, got {self.resolution}")
        if len(self.bounds_min) != 3 or len(self.bounds_max) != 3:
            raise ValidationError("voxel bounds need three values per corner")
        if any(lo >= hi for lo, hi in zip(self.bounds_min, self.bounds_max)):
            raise ValidationError(f"empty voxel bounds {self.bounds_min} .. {self.bounds_max}")
        if self.max_points_per_voxel is not None and self.max_points_per_voxel < 1:
            raise ValidationError("max_points_per_voxel must be >= 1")


@dataclass
class VoxelGrid:
    """Occupied voxels in lexicographic index order with their retained point indices."""

    config: VoxelGridConfig
    indices: np.ndarray  # (N1, 3) int64
    members: list[np.ndarray]
    features: np.ndarray | None = None  # (N1, c_p)
    _tree: cKDTree | None = field(default=None, repr=False, compare=False)

    @property
    def n_occupied(self) -> int:
        return int(self.indices.shape[0])

    @property
    def centers(self) -> np.ndarray:
        return (self.indices.astype(np.float64) + 0.5) * self.config.resolution

    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.centers)
        return self._tree


def assign_voxels(cloud: np.ndarray, config: VoxelGridConfig = VoxelGridConfig()) -> VoxelGrid:
    """Bin points by ``floor(coord / resolution)``.

    Points outside ``[bounds_min, bounds_max)`` are dropped; a full voxel keeps
    its lowest-index points.
    """
    pts = as_cloud(cloud)
    lo = np.asarray(config.bounds_min)
    hi = np.asarray(config.bounds_max)
    inside = np.all((pts[:, :3] >= lo) & (pts[:, :3] < hi), axis=1)
    idx = np.flatnonzero(inside)
    if idx.size == 0:
        return VoxelGrid(config, np.zeros((0, 3), dtype=np.int64), [])
    triples = np.floor(pts[idx, :3] / config.resolution).astype(np.int64)
    # stable sort: lexicographic triple, then point index
    order = np.lexsort((idx, triples[:, 2], triples[:, 1], triples[:, 0]))
    triples, idx = triples[order], idx[order]
    starts = np.flatnonzero(np.r_[True, np.any(triples[1:] != triples[:-1], axis=1)])
    ends = np.r_[starts[1:], triples.shape[0]]
    cap = config.max_points_per_voxel
    members = [idx[s:e] if cap is None else idx[s:min(e, s + cap)] for s, e in zip(starts, ends)]
    return VoxelGrid(config, triples[starts], members)


def sinusoidal_encoder(channels: int = 48) -> Encoder:
    """Fixed sin/cos embedding of ``(x, y, z, r)`` at octave-spaced frequencies."""

    def encode(points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        j = np.arange(channels)
        comp = j % 4
        octave = (j // 4) // 2
        phase = pts[:, comp] * (np.pi / 2.0 ** octave)
        return np.where((j // 4) % 2 == 0, np.sin(phase), np.cos(phase))

    encode.channels = channels  # type: ignore[attr-defined]
    return encode


def featurize_voxels(
    grid: VoxelGrid, cloud: np.ndarray, encoder: Encoder | None = None, channels: int = 48
) -> VoxelGrid:
    """Set each voxel's feature row to the mean encoder output of its retained members."""
    pts = as_cloud(cloud)
    enc = encoder if encoder is not None else sinusoidal_encoder(channels)
    if grid.n_occupied == 0:
        grid.features = np.zeros((0, channels))
        return grid
    flat = np.concatenate(grid.members)
    if flat.size and flat.max() >= pts.shape[0]:
        raise ValidationError("voxel grid references points missing from the cloud")
    feats = np.asarray(enc(pts[flat]), dtype=np.float64)
    if feats.ndim != 2 or feats.shape != (flat.size, channels):
        raise ValidationError(
            f"encoder produced shape {feats.shape}, expected ({flat.size}, {channels})"
        )
    counts = np.array([m.size for m in grid.members])
    owner = np.repeat(np.arange(grid.n_occupied), counts)
    sums = np.zeros((grid.n_occupied, channels))
    np.add.at(sums, owner, feats)
    grid.features = sums / counts[:, None]
    return grid


def nearest_voxels(grid: VoxelGrid, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Up to three nearest occupied voxel centres per query, ties broken by voxel order."""
    if grid.n_occupied == 0:
        raise ValidationError("cannot interpolate from an empty voxel grid")
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))[:, :3]
    return nearest_k(grid.centers, q, NEIGHBORS, tree=grid.tree())


def interpolate_points(grid: VoxelGrid, queries: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Interpolated ``(M, c_p)`` features for ``M`` query positions."""
    if grid.features is None:
        raise ValidationError("voxel grid has no features; call featurize_voxels first")
    nbr, d = nearest_voxels(grid, queries)
    w = inverse_distance_weights(d, eps)
    return np.einsum("mk,mkc->mc", w, grid.features[nbr])


def interpolate_point_features(grid: VoxelGrid, query, eps: float = EPS) -> np.ndarray:
    return interpolate_points(grid, np.asarray(query, dtype=np.float64).reshape(1, -1), eps)[0]


def dump_voxel_grid(grid: VoxelGrid, path: str | Path) -> None:
    """Text dump: header ``N1 c_p r_l`` then ``ix iy iz f1 .. f_cp`` per voxel."""
    feats = grid.features if grid.features is not None else np.zeros((grid.n_occupied, 0))
    lines = [f"{grid.n_occupied} {feats.shape[1]} {grid.config.resolution!r}"]
    for triple, row in zip(grid.indices, feats):
        vals = " ".join(repr(float(x)) for x in row)
        lines.append(f"{triple[0]} {triple[1]} {triple[2]} {vals}".rstrip())
    Path(path).write_text("\n".join(lines) + "\n")


def load_voxel_dump(path: str | Path) -> tuple[np.ndarray, np.ndarray, float]:
    """Read a dump back as ``(indices, features, resolution)``."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise FormatError(f"{path}: empty voxel dump")
    head = lines[0].split()
    if len(head) != 3:
        raise FormatError(f"{path}: header needs 'N1 c_p r_l', got {lines[0]!r}")
    n1, cp, res = int(head[0]), int(head[1]), float(head[2])
    if len(lines) - 1 != n1:
        raise FormatError(f"{path}: header declares {n1} voxels, found {len(lines) - 1} rows")
    idx = np.zeros((n1, 3), dtype=np.int64)
    feats = np.zeros((n1, cp))
    for i, line in enumerate(lines[1:]):
        parts = line.split()
        if len(parts) != 3 + cp:
            raise FormatError(f"{path}: row {i + 1} has {len(parts)} fields, expected {3 + cp}")
        idx[i] = [int(p) for p in parts[:3]]
        feats[i] = [float(p) for p in parts[3:]]
    return idx, feats, res
