"""Point-pixel feature fusion.

Point features are scattered onto the feature plane, completed inside the
bounding rectangle of the projections by 3-NN inverse-distance
interpolation, padded with image features outside it, concatenated with the
image features and refined by single-head self-attention + LayerNorm.

Feature maps are plain ``(c, h, w)`` float arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lfpcfuse.errors import NumericalIntegrityError, ValidationError
from lfpcfuse.geometry import Projections, SparseGrid, grid_cells, nearest_winners
from lfpcfuse.knn import inverse_distance_weights, nearest_k

EPS = 1e-8
NEIGHBORS = 3
LAYERNORM_EPS = 1e-12
STREAM_THRESHOLD = 4096
STREAM_BLOCK = 1024


def as_feature_map(x: np.ndarray, name: str = "feature map") -> np.ndarray:
    f = np.asarray(x, dtype=np.float64)
    if f.ndim != 3 or min(f.shape) < 1:
        raise ValidationError(f"{name} must be c x h x w with every dimension >= 1, got {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValidationError(f"{name} contains non-finite values")
    return f


@dataclass(frozen=True)
class BoundingRect:
    """Inclusive cell range; ``x`` runs over columns, ``y`` over rows."""

    x_min: int
    x_max: int
    y_min: int
    y_max: int

    def __post_init__(self) -> None:
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValidationError(f"degenerate rectangle {self}")

    @classmethod
    def full(cls, h: int, w: int) -> "BoundingRect":
        return cls(0, w - 1, 0, h - 1)

    def mask(self, h: int, w: int) -> np.ndarray:
        m = np.zeros((h, w), dtype=bool)
        m[self.y_min:self.y_max + 1, self.x_min:self.x_max + 1] = True
        return m

    def check_within(self, h: int, w: int) -> None:
        if self.x_min < 0 or self.y_min < 0 or self.x_max >= w or self.y_max >= h:
            raise ValidationError(f"rectangle {self} exceeds grid {h}x{w}")

    @property
    def n_cells(self) -> int:
        return (self.x_max - self.x_min + 1) * (self.y_max - self.y_min + 1)


@dataclass(frozen=True)
class ScatterStats:
    """Every projection falls in exactly one bucket.

    ``clamped`` counts kept projections whose rounded cell had to be clamped into
    the grid; ``collided`` counts projections that lost a cell to a nearer point.
    """

    total: int
    scattered: int
    clamped: int
    collided: int


@dataclass(frozen=True)
class AttentionParams:
    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray

    def __post_init__(self) -> None:
        mats = [np.asarray(m, dtype=np.float64) for m in (self.W_Q, self.W_K, self.W_V)]
        if any(m.ndim != 2 for m in mats):
            raise ValidationError("projection matrices must be 2-D")
        C = mats[0].shape[0]
        if mats[1].shape[0] != C or mats[2].shape[0] != C:
            raise ValidationError("W_Q, W_K and W_V must share their input dimension")
        if mats[0].shape[1] != mats[1].shape[1]:
            raise ValidationError(
                f"query/key widths differ: {mats[0].shape[1]} vs {mats[1].shape[1]}"
            )
        gamma = np.asarray(self.gamma, dtype=np.float64).reshape(-1)
        beta = np.asarray(self.beta, dtype=np.float64).reshape(-1)
        if gamma.shape != (mats[2].shape[1],) or beta.shape != gamma.shape:
            raise ValidationError("LayerNorm scale/shift must have C_v entries")
        for a in (*mats, gamma, beta):
            if not np.all(np.isfinite(a)):
                raise ValidationError("attention parameters must be finite")
        object.__setattr__(self, "W_Q", mats[0])
        object.__setattr__(self, "W_K", mats[1])
        object.__setattr__(self, "W_V", mats[2])
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "beta", beta)

    @property
    def C(self) -> int:
        return int(self.W_Q.shape[0])

    @property
    def C_k(self) -> int:
        return int(self.W_K.shape[1])

    @property
    def C_v(self) -> int:
        return int(self.W_V.shape[1])

    @classmethod
    def seeded(cls, C: int, C_q: int, C_k: int, C_v: int, seed: int = 0) -> "AttentionParams":
        """Reproducible Gaussian init scaled by ``1/sqrt(C)``; unit scale, zero shift."""
        if C_q != C_k:
            raise ValidationError("C_q must equal C_k")
        rng = np.random.default_rng(seed)
        s = 1.0 / math.sqrt(C)
        return cls(
            W_Q=rng.standard_normal((C, C_q)) * s,
            W_K=rng.standard_normal((C, C_k)) * s,
            W_V=rng.standard_normal((C, C_v)) * s,
            gamma=np.ones(C_v),
            beta=np.zeros(C_v),
        )


def compute_bounding_rectangle(projections: Projections, h: int, w: int) -> BoundingRect:
    """Smallest cell rectangle containing every rounded (and clamped) feature-plane projection."""
    if len(projections) == 0:
        raise ValidationError("bounding rectangle needs at least one projection")
    rows, cols, _ = grid_cells(projections.u_feat, projections.v_feat, h, w)
    return BoundingRect(int(cols.min()), int(cols.max()), int(rows.min()), int(rows.max()))


def scatter_point_features(
    projections: Projections, features: np.ndarray, h: int, w: int
) -> tuple[np.ndarray, SparseGrid, ScatterStats]:
    """Write each projection's feature row into cell ``(round(v'), round(u'))``.

    ``features`` is ``(len(projections), c_p)``.  The nearest point wins a
    contested cell.  The returned mask grid stores the winner's depth.
    """
    feats = np.asarray(features, dtype=np.float64)
    n = len(projections)
    if feats.ndim != 2 or feats.shape[0] != n:
        raise ValidationError(f"expected ({n}, c_p) point features, got {feats.shape}")
    out = np.zeros((feats.shape[1], h, w))
    if n == 0:
        return out, SparseGrid.empty(h, w), ScatterStats(0, 0, 0, 0)
    rows, cols, clamped = grid_cells(projections.u_feat, projections.v_feat, h, w)
    keep = nearest_winners(rows, cols, projections.depth, w)
    out[:, rows[keep], cols[keep]] = feats[keep].T
    depth = np.zeros((h, w))
    mask = np.zeros((h, w), dtype=bool)
    depth[rows[keep], cols[keep]] = projections.depth[keep]
    mask[rows[keep], cols[keep]] = True
    n_clamped = int(clamped[keep].sum())
    stats = ScatterStats(
        total=n,
        scattered=int(keep.size) - n_clamped,
        clamped=n_clamped,
        collided=n - int(keep.size),
    )
    return out, SparseGrid(depth, mask), stats


def _mask_array(mask) -> np.ndarray:
    return mask.mask if isinstance(mask, SparseGrid) else np.asarray(mask, dtype=bool)


def interpolate_missing(
    scattered: np.ndarray, mask, rect: BoundingRect, eps: float = EPS
) -> np.ndarray:
    """Fill unassigned cells inside ``rect`` from their three nearest assigned cells.

    Only assigned cells inside ``rect`` are candidates; ties at equal distance go
    to the earlier cell in row-major order.  Everything else passes through.
    """
    f = as_feature_map(scattered, "scattered map")
    _, h, w = f.shape
    valid = _mask_array(mask)
    if valid.shape != (h, w):
        raise ValidationError(f"mask shape {valid.shape} does not match map {h}x{w}")
    rect.check_within(h, w)
    inside = rect.mask(h, w)
    src_r, src_c = np.nonzero(valid & inside)
    if src_r.size == 0:
        raise ValidationError(f"no assigned cells inside {rect}")
    dst_r, dst_c = np.nonzero(~valid & inside)
    out = f.copy()
    if dst_r.size == 0:
        return out
    src = np.stack([src_r, src_c], axis=1).astype(np.float64)
    dst = np.stack([dst_r, dst_c], axis=1).astype(np.float64)
    nbr, d = nearest_k(src, dst, NEIGHBORS)
    wts = inverse_distance_weights(d, eps)
    vals = f[:, src_r[nbr], src_c[nbr]]  # (c, M, k)
    out[:, dst_r, dst_c] = np.einsum("mk,cmk->cm", wts, vals)
    return out


def fill_outside(completed: np.ndarray, image_features: np.ndarray, rect: BoundingRect) -> np.ndarray:
    a = as_feature_map(completed, "completed map")
    b = as_feature_map(image_features, "image features")
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: point map {a.shape} vs image map {b.shape}")
    rect.check_within(a.shape[1], a.shape[2])
    return np.where(rect.mask(a.shape[1], a.shape[2])[None], a, b)


def alignment_loss(fill_point: np.ndarray, image_features: np.ndarray) -> tuple[float, np.ndarray]:
    """Per-cell squared L2 distance averaged over the ``h*w`` cells, and its gradient."""
    a = as_feature_map(fill_point, "filled point map")
    b = as_feature_map(image_features, "image features")
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    n = a.shape[1] * a.shape[2]
    diff = a - b
    return float(np.sum(diff * diff) / n), (2.0 / n) * diff


def fuse_concat(fill_point: np.ndarray, image_features: np.ndarray) -> np.ndarray:
    a = as_feature_map(fill_point, "filled point map")
    b = as_feature_map(image_features, "image features")
    if a.shape[1:] != b.shape[1:]:
        raise ValidationError(f"spatial mismatch: {a.shape[1:]} vs {b.shape[1:]}")
    return np.concatenate([a, b], axis=0)


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(scores)):
        raise NumericalIntegrityError("attention scores contain non-finite values")
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _qkv(fused: np.ndarray, params: AttentionParams) -> tuple[np.ndarray, ...]:
    C, h, w = fused.shape
    if C != params.C:
        raise ValidationError(f"attention expects {params.C} channels, got {C}")
    flat = fused.reshape(C, h * w)
    return params.W_Q.T @ flat, params.W_K.T @ flat, params.W_V.T @ flat


def attention_weights(fused: np.ndarray, params: AttentionParams) -> np.ndarray:
    """Dense ``(h*w, h*w)`` row-softmax matrix; intended for small grids and diagnostics."""
    q, k, _ = _qkv(as_feature_map(fused, "fused map"), params)
    return softmax_rows((q.T @ k) / math.sqrt(params.C_k))


def attention(
    fused: np.ndarray, params: AttentionParams, stream_threshold: int = STREAM_THRESHOLD,
    block: int = STREAM_BLOCK,
) -> np.ndarray:
    """``softmax(Q^T K / sqrt(C_k)) V^T`` as an ``(h*w, C_v)`` matrix.

    Above ``stream_threshold`` cells the score matrix is produced ``block`` rows
    at a time so the full square never needs to be resident.
    """
    f = as_feature_map(fused, "fused map")
    q, k, v = _qkv(f, params)
    scale = 1.0 / math.sqrt(params.C_k)
    n = q.shape[1]
    if n <= stream_threshold:
        return softmax_rows((q.T @ k) * scale) @ v.T
    out = np.empty((n, params.C_v))
    for s in range(0, n, block):
        e = min(s + block, n)
        out[s:e] = softmax_rows((q[:, s:e].T @ k) * scale) @ v.T
    return out


def layer_norm_cells(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = LAYERNORM_EPS
) -> np.ndarray:
    """Normalise each row of ``(cells, channels)`` over the channel axis."""
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def self_attention(
    fused: np.ndarray,
    params: AttentionParams,
    bias: np.ndarray | None = None,
    stream_threshold: int = STREAM_THRESHOLD,
    ln_eps: float = LAYERNORM_EPS,
) -> tuple[np.ndarray, np.ndarray]:
    """Refine the fused map with self-attention.

    Returns ``(refined, attention_output)``: the LayerNormed ``(C_v, h, w)`` map and
    the raw ``(h*w, C_v)`` attention output before any bias.  A ``(C_v, h, w)``
    ``bias`` is added per cell to the attention output ahead of LayerNorm.
    """
    f = as_feature_map(fused, "fused map")
    _, h, w = f.shape
    att = attention(f, params, stream_threshold=stream_threshold)
    total = att
    if bias is not None:
        b = as_feature_map(bias, "attention bias")
        if b.shape != (params.C_v, h, w):
            raise ValidationError(f"bias must be {(params.C_v, h, w)}, got {b.shape}")
        total = att + b.reshape(params.C_v, h * w).T
    normed = layer_norm_cells(total, params.gamma, params.beta, ln_eps)
    return normed.T.reshape(params.C_v, h, w), att
