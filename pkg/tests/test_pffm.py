import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lfpcfuse import oracles
from lfpcfuse.errors import NumericalIntegrityError, ValidationError
from lfpcfuse.geometry import Projections, SparseGrid
from lfpcfuse.pffm import (
    AttentionParams,
    BoundingRect,
    alignment_loss,
    attention,
    attention_weights,
    compute_bounding_rectangle,
    fill_outside,
    fuse_concat,
    interpolate_missing,
    layer_norm_cells,
    scatter_point_features,
    self_attention,
    softmax_rows,
)


def projections(cols, rows, depth=None):
    cols = np.asarray(cols, dtype=float)
    rows = np.asarray(rows, dtype=float)
    depth = np.ones_like(cols) if depth is None else np.asarray(depth, dtype=float)
    idx = np.arange(cols.size)
    return Projections(idx, cols * 4, rows * 4, cols, rows, depth)


# -- bounding rectangle ------------------------------------------------------------


def test_rect_single_projection():
    r = compute_bounding_rectangle(projections([5], [7]), 24, 32)
    assert (r.x_min, r.x_max, r.y_min, r.y_max) == (5, 5, 7, 7)


def test_rect_corners_give_full_grid():
    h, w = 24, 32
    r = compute_bounding_rectangle(projections([0, w - 1], [0, h - 1]), h, w)
    assert r == BoundingRect.full(h, w)


def test_rect_matches_scan(rng):
    cols, rows = rng.uniform(0, 31.9, 200), rng.uniform(0, 23.9, 200)
    r = compute_bounding_rectangle(projections(cols, rows), 24, 32)
    assert (r.x_min, r.x_max, r.y_min, r.y_max) == oracles.bounding_rect(cols, rows, 24, 32)


def test_rect_empty_is_an_error():
    with pytest.raises(ValidationError, match="at least one projection"):
        compute_bounding_rectangle(Projections.empty(), 4, 4)


# -- scatter ---------------------------------------------------------------------


def test_scatter_empty_and_single():
    f, g, stats = scatter_point_features(Projections.empty(), np.zeros((0, 3)), 4, 5)
    assert not f.any() and not g.mask.any() and stats.total == 0
    e1 = np.array([[1.0, 0.0, 0.0]])
    f, g, _ = scatter_point_features(projections([2], [1]), e1, 4, 5)
    assert np.count_nonzero(np.any(f != 0, axis=0)) == 1
    np.testing.assert_array_equal(f[:, 1, 2], e1[0])


def test_scatter_collision_nearest_wins():
    feats = np.array([[8.0, 8.0], [3.0, 3.0]])
    f, g, stats = scatter_point_features(projections([1, 1.2], [1, 0.9], [8.0, 3.0]), feats, 3, 3)
    np.testing.assert_array_equal(f[:, 1, 1], [3.0, 3.0])
    assert g.values[1, 1] == 3.0
    assert (stats.scattered, stats.collided, stats.clamped) == (1, 1, 0)


def test_scatter_stats_partition(rng):
    n = 300
    proj = projections(rng.uniform(-1, 9, n), rng.uniform(-1, 7, n), rng.uniform(1, 5, n))
    _, g, s = scatter_point_features(proj, rng.standard_normal((n, 2)), 6, 8)
    assert s.total == s.scattered + s.clamped + s.collided == n
    assert g.count() == s.scattered + s.clamped


# -- completion ----------------------------------------------------------------


def test_all_valid_is_noop(rng):
    f = rng.standard_normal((3, 5, 6))
    out = interpolate_missing(f, np.ones((5, 6), bool), BoundingRect.full(5, 6))
    np.testing.assert_array_equal(out, f)


def test_equidistant_three_neighbours():
    f = np.zeros((1, 3, 3))
    mask = np.zeros((3, 3), bool)
    for (r, c), val in zip([(0, 1), (1, 0), (1, 2)], [1.0, 2.0, 6.0]):
        f[0, r, c] = val
        mask[r, c] = True
    rect = BoundingRect(0, 2, 0, 1)
    out = interpolate_missing(f, mask, rect)
    assert out[0, 1, 1] == pytest.approx(3.0, abs=1e-12)
    assert out[0, 2, 1] == 0.0  # outside the rectangle: untouched


def test_completion_matches_oracle(rng):
    f = rng.standard_normal((4, 16, 16))
    mask = rng.uniform(size=(16, 16)) < 0.3
    f[:, ~mask] = 0.0
    rect = BoundingRect(2, 13, 1, 15)
    out = interpolate_missing(f, mask, rect)
    ref = oracles.interpolate_missing(f, mask, (2, 13, 1, 15))
    np.testing.assert_allclose(out, ref, atol=1e-9, rtol=0)


def test_completion_accepts_sparse_grid(rng):
    mask = np.zeros((4, 4), bool)
    mask[0, 0] = mask[3, 3] = True
    f = rng.standard_normal((2, 4, 4)) * mask
    a = interpolate_missing(f, mask, BoundingRect.full(4, 4))
    b = interpolate_missing(f, SparseGrid(np.ones((4, 4)), mask), BoundingRect.full(4, 4))
    np.testing.assert_array_equal(a, b)


def test_completion_needs_a_valid_cell():
    with pytest.raises(ValidationError, match="no assigned cells"):
        interpolate_missing(np.zeros((1, 3, 3)), np.zeros((3, 3), bool), BoundingRect.full(3, 3))


def test_rect_out_of_grid_rejected():
    with pytest.raises(ValidationError):
        interpolate_missing(np.zeros((1, 3, 3)), np.ones((3, 3), bool), BoundingRect(0, 5, 0, 1))


# -- fill outside / alignment / concat ---------------------------------------


def test_fill_outside_cases(rng):
    a, b = rng.standard_normal((2, 2, 5, 6))
    np.testing.assert_array_equal(fill_outside(a, b, BoundingRect.full(5, 6)), a)
    out = fill_outside(a, b, BoundingRect(3, 3, 2, 2))
    assert np.count_nonzero(np.any(out != b, axis=0)) == 1
    rect = BoundingRect(1, 4, 2, 3)
    out = fill_outside(a, b, rect)
    for r in range(5):
        for c in range(6):
            src = a if (1 <= c <= 4 and 2 <= r <= 3) else b
            assert np.array_equal(out[:, r, c], src[:, r, c])


def test_alignment_examples(rng):
    x = rng.standard_normal((2, 3, 3))
    loss, grad = alignment_loss(x, x)
    assert loss == 0.0 and not grad.any()
    loss, grad = alignment_loss(np.full((1, 1, 1), 3.0), np.full((1, 1, 1), 1.0))
    assert loss == 4.0 and grad[0, 0, 0] == 4.0


def test_alignment_gradient_fd(rng):
    a, b = rng.standard_normal((2, 4, 8, 8))
    _, grad = alignment_loss(a, b)
    fd = oracles.central_difference(lambda x: alignment_loss(x, b)[0], a)
    np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-10)


def test_concat_order_and_split(rng):
    a, b = rng.standard_normal((2, 3, 4, 5))
    out = fuse_concat(a, b)
    np.testing.assert_array_equal(out[:3], a)
    np.testing.assert_array_equal(out[3:], b)
    out = fuse_concat(np.zeros((1, 2, 2)), np.ones((1, 2, 2)))
    assert out.shape == (2, 2, 2) and not out[0].any() and out[1].all()


# -- attention ---------------------------------------------------------------------


def test_uniform_attention_when_qk_zero(rng):
    C, Cv = 3, 4
    p = AttentionParams(np.zeros((C, 2)), np.zeros((C, 2)), rng.standard_normal((C, Cv)), np.ones(Cv), np.zeros(Cv))
    f = rng.standard_normal((C, 3, 3))
    att = attention(f, p)
    v = p.W_V.T @ f.reshape(C, -1)
    np.testing.assert_allclose(att, np.tile(v.mean(axis=1), (9, 1)), atol=1e-14)


def test_single_cell_returns_value_exactly(rng):
    p = AttentionParams.seeded(5, 3, 3, 4, seed=2)
    f = rng.standard_normal((5, 1, 1))
    _, raw = self_attention(f, p)
    np.testing.assert_array_equal(raw[0], p.W_V.T @ f[:, 0, 0])


def test_attention_matches_dense_oracle(rng):
    p = AttentionParams.seeded(2, 3, 3, 4, seed=5)
    f = rng.standard_normal((2, 3, 3)) * 0.5
    bias = rng.standard_normal((4, 3, 3))
    refined, raw = self_attention(f, p, bias=bias)
    ref_refined, ref_raw, ref_w = oracles.attention(f, p.W_Q, p.W_K, p.W_V, p.gamma, p.beta, bias)
    np.testing.assert_allclose(raw, ref_raw, atol=1e-9, rtol=0)
    np.testing.assert_allclose(refined, ref_refined, atol=1e-9, rtol=0)
    w = attention_weights(f, p)
    np.testing.assert_allclose(w, ref_w, atol=1e-12)
    assert np.max(np.abs(w.sum(axis=1) - 1)) <= 1e-12


def test_streaming_equals_dense(rng):
    p = AttentionParams.seeded(6, 4, 4, 5, seed=9)
    f = rng.standard_normal((6, 9, 11))
    dense = attention(f, p, stream_threshold=10_000)
    streamed = attention(f, p, stream_threshold=10, block=7)
    np.testing.assert_allclose(streamed, dense, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(1, 6))
def test_layernorm_statistics(seed, h, w):
    rng = np.random.default_rng(seed)
    p = AttentionParams.seeded(4, 3, 3, 6, seed=seed % 1000)
    refined, _ = self_attention(rng.standard_normal((4, h, w)) * 3, p, bias=rng.standard_normal((6, h, w)))
    cells = refined.reshape(6, -1)
    assert np.all(np.abs(cells.mean(axis=0)) <= 1e-6)
    assert np.all(np.abs(cells.var(axis=0) - 1) <= 1e-6)


def test_layernorm_affine():
    x = np.array([[1.0, 2.0, 3.0]])
    out = layer_norm_cells(x, np.array([2.0, 2.0, 2.0]), np.array([1.0, 1.0, 1.0]))
    np.testing.assert_allclose(out, [[1 - 2 * np.sqrt(1.5), 1.0, 1 + 2 * np.sqrt(1.5)]], atol=1e-9)


def test_non_finite_scores_flagged():
    with pytest.raises(NumericalIntegrityError):
        softmax_rows(np.array([[0.0, np.inf]]))


def test_param_validation():
    with pytest.raises(ValidationError, match="query/key widths"):
        AttentionParams(np.zeros((3, 2)), np.zeros((3, 4)), np.zeros((3, 2)), np.ones(2), np.zeros(2))
    p = AttentionParams.seeded(3, 2, 2, 2)
    with pytest.raises(ValidationError, match="expects 3 channels"):
        attention(np.zeros((4, 2, 2)), p)
    with pytest.raises(ValidationError, match="bias must be"):
        self_attention(np.zeros((3, 2, 2)), p, bias=np.zeros((2, 3, 3)))
