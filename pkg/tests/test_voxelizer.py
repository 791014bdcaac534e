import math

import numpy as np
import pytest

from lfpcfuse import oracles
from lfpcfuse.errors import FormatError, ValidationError
from lfpcfuse.knn import nearest_k
from lfpcfuse.voxelizer import (
    VoxelGrid,
    VoxelGridConfig,
    assign_voxels,
    dump_voxel_grid,
    featurize_voxels,
    interpolate_point_features,
    interpolate_points,
    load_voxel_dump,
    sinusoidal_encoder,
)

OPEN = VoxelGridConfig(0.1, (-100.0, -100.0, -100.0), (100.0, 100.0, 100.0), 5)


def test_floor_assignment():
    g = assign_voxels([[0.05, 0.05, 0.05, 0]], OPEN)
    assert g.indices.tolist() == [[0, 0, 0]]
    g = assign_voxels([[-0.05, 0.0, 0.0, 0]], OPEN)
    assert g.indices.tolist() == [[-1, 0, 0]]


def test_cap_keeps_lowest_indices():
    pts = np.zeros((9, 4))
    pts[:, :3] = 0.05
    pts[[1, 4], 0] = 3.05  # two points elsewhere
    g = assign_voxels(pts, OPEN)
    by_voxel = {tuple(t): m.tolist() for t, m in zip(g.indices, g.members)}
    assert by_voxel[(0, 0, 0)] == [0, 2, 3, 5, 6]
    assert by_voxel[(30, 0, 0)] == [1, 4]


def test_grouping_matches_brute_force(rng):
    pts = np.hstack([rng.uniform(-0.5, 0.5, (400, 3)), rng.uniform(0, 1, (400, 1))])
    g = assign_voxels(pts, OPEN)
    groups: dict[tuple, list[int]] = {}
    for i, p in enumerate(pts):
        key = tuple(math.floor(x / 0.1) for x in p[:3])
        groups.setdefault(key, []).append(i)
    assert [tuple(t) for t in g.indices] == sorted(groups)
    for t, m in zip(g.indices, g.members):
        assert m.tolist() == groups[tuple(t)][:5]


def test_bounds_are_half_open():
    cfg = VoxelGridConfig(0.1, (-50.0, 6.0, -7.0), (50.0, 106.0, 11.0), 5)
    pts = [[0, 6.0, 0, 0], [0, 106.0, 0, 0], [50.0, 10, 0, 0], [-50.0, 10, 0, 0]]
    g = assign_voxels(pts, cfg)
    kept = sorted(int(i) for m in g.members for i in m)
    assert kept == [0, 3]


def test_empty_cloud():
    g = assign_voxels(np.zeros((0, 4)), OPEN)
    assert g.n_occupied == 0
    featurize_voxels(g, np.zeros((0, 4)), channels=6)
    assert g.features.shape == (0, 6)
    with pytest.raises(ValidationError, match="empty voxel grid"):
        interpolate_points(g, np.zeros((1, 3)))


def test_single_and_pair_means():
    enc = sinusoidal_encoder(16)
    pts = np.array([[0.01, 0.01, 0.01, 0.3], [0.02, 0.03, 0.04, 0.7], [5.0, 5.0, 5.0, 0.1]])
    g = featurize_voxels(assign_voxels(pts, OPEN), pts, channels=16)
    np.testing.assert_array_equal(g.features[1], enc(pts[2:3])[0])
    np.testing.assert_allclose(g.features[0], (enc(pts[:1])[0] + enc(pts[1:2])[0]) / 2, atol=1e-15)


def test_means_match_recomputation(rng):
    pts = np.hstack([rng.uniform(-0.3, 0.3, (50, 3)), rng.uniform(0, 1, (50, 1))])
    g = featurize_voxels(assign_voxels(pts, OPEN), pts, channels=12)
    enc = sinusoidal_encoder(12)
    for m, f in zip(g.members, g.features):
        ref = sum(enc(pts[i:i + 1])[0] for i in m) / len(m)
        np.testing.assert_allclose(f, ref, atol=1e-12)


def test_encoder_bounded_and_distinct():
    enc = sinusoidal_encoder(48)
    out = enc(np.array([[1.0, 2.0, 3.0, 0.5], [1.0, 2.0, 3.1, 0.5]]))
    assert out.shape == (2, 48) and np.all(np.abs(out) <= 1)
    assert not np.allclose(out[0], out[1])


def _grid_from(indices, features):
    idx = np.asarray(indices, dtype=np.int64)
    order = np.lexsort(idx.T[::-1])
    g = VoxelGrid(OPEN, idx[order], [np.array([i]) for i in range(len(idx))])
    g.features = np.asarray(features, dtype=np.float64)[order]
    return g


def test_query_at_center_returns_that_voxel():
    g = _grid_from([[0, 0, 0], [5, 0, 0], [0, 7, 0], [3, 3, 3]], np.eye(4))
    out = interpolate_point_features(g, [0.05, 0.05, 0.05])
    err = np.linalg.norm(out - g.features[0])
    assert err <= 1e-6 * np.linalg.norm(g.features[0])


def test_equidistant_three_give_mean():
    # three centres at distance sqrt(3) * 0.05 from the origin, a fourth far away
    g = _grid_from([[0, 0, 0], [-1, -1, 0], [-1, 0, -1], [5, 5, 5]], [[3.0], [6.0], [9.0], [100.0]])
    nbr, d = nearest_k(g.centers, np.zeros((1, 3)), 3)
    assert np.ptp(d) == 0
    np.testing.assert_allclose(interpolate_point_features(g, [0.0, 0.0, 0.0]), [6.0], atol=1e-12)


def test_fewer_than_three_voxels():
    g = _grid_from([[0, 0, 0], [10, 0, 0]], [[1.0], [2.0]])
    out = interpolate_point_features(g, [0.55, 0.05, 0.05])
    np.testing.assert_allclose(out, [1.5], atol=1e-12)


def test_matches_exhaustive_oracle(rng):
    idx = np.unique(rng.integers(-10, 10, (20, 3)), axis=0)
    feats = rng.standard_normal((len(idx), 5))
    g = _grid_from(idx, feats)
    for q in rng.uniform(-1.0, 1.0, (10, 3)):
        ref = oracles.voxel_interpolate(g.indices, g.features, 0.1, q)
        np.testing.assert_allclose(interpolate_point_features(g, q), ref, atol=1e-9)


def test_knn_ties_follow_reference_order():
    ref = np.array([[1.0, 0], [0, 1.0], [-1.0, 0], [0, -1.0], [2.0, 0]])
    nbr, d = nearest_k(ref, np.zeros((1, 2)), 3)
    assert nbr.tolist() == [[0, 1, 2]] and np.all(d == 1.0)


def test_knn_many_ties_beyond_probe_width():
    grid = np.array([[x, y] for x in range(-3, 4) for y in range(-3, 4) if (x, y) != (0, 0)], dtype=float)
    for q in ([0.0, 0.0], [0.5, 0.5], [1.0, 0.0]):
        nbr, _ = nearest_k(grid, np.array([q]), 3)
        brute = sorted(range(len(grid)), key=lambda i: (np.hypot(*(grid[i] - q)), i))[:3]
        assert nbr[0].tolist() == brute


def test_dump_round_trip(tmp_path, rng):
    pts = np.hstack([rng.uniform(-1, 1, (60, 3)), rng.uniform(0, 1, (60, 1))])
    g = featurize_voxels(assign_voxels(pts, OPEN), pts, channels=4)
    dump_voxel_grid(g, tmp_path / "v.txt")
    idx, feats, res = load_voxel_dump(tmp_path / "v.txt")
    np.testing.assert_array_equal(idx, g.indices)
    np.testing.assert_array_equal(feats, g.features)
    assert res == 0.1
    (tmp_path / "bad.txt").write_text("3 4 0.1\n0 0 0 1 2 3 4\n")
    with pytest.raises(FormatError, match="declares 3 voxels, found 1"):
        load_voxel_dump(tmp_path / "bad.txt")


def test_config_validation():
    with pytest.raises(ValidationError):
        VoxelGridConfig(resolution=0.0)
    with pytest.raises(ValidationError):
        VoxelGridConfig(bounds_min=(0, 0, 0), bounds_max=(0, 1, 1))
