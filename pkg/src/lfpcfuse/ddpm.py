"""Depth-difference perception.

The log-ratio between predicted depth and LiDAR depth at projected cells is
embedded by two 3x3 convolutions and added to the fusion attention output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from lfpcfuse.errors import ValidationError
from lfpcfuse.geometry import SparseGrid
from lfpcfuse.pffm import AttentionParams, self_attention

EPS = 1e-8
HIDDEN = 8
KERNEL = 3


@dataclass(frozen=True)
class ConvStack:
    """Two same-padded, stride-1 convolutions with bias: ``1 -> hidden -> C_v``.

    Weights are ``(out, in, kh, kw)``.  No activation sits between the layers.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self) -> None:
        w1 = np.asarray(self.w1, dtype=np.float64)
        w2 = np.asarray(self.w2, dtype=np.float64)
        b1 = np.asarray(self.b1, dtype=np.float64).reshape(-1)
        b2 = np.asarray(self.b2, dtype=np.float64).reshape(-1)
        if w1.ndim != 4 or w2.ndim != 4 or w1.shape[1] != 1:
            raise ValidationError("conv weights must be (out, in, k, k) with a single input channel")
        if w2.shape[1] != w1.shape[0] or b1.shape != (w1.shape[0],) or b2.shape != (w2.shape[0],):
            raise ValidationError("conv layer shapes do not chain")
        for w in (w1, w2):
            if w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
                raise ValidationError(f"kernels must be square and odd, got {w.shape[2:]}")
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "w2", w2)
        object.__setattr__(self, "b1", b1)
        object.__setattr__(self, "b2", b2)

    @property
    def out_channels(self) -> int:
        return int(self.w2.shape[0])

    @classmethod
    def seeded(cls, out_channels: int, hidden: int = HIDDEN, seed: int = 1) -> "ConvStack":
        rng = np.random.default_rng(seed)
        k = KERNEL
        return cls(
            w1=rng.standard_normal((hidden, 1, k, k)) / k,
            b1=rng.standard_normal(hidden) * 0.01,
            w2=rng.standard_normal((out_channels, hidden, k, k)) / (k * np.sqrt(hidden)),
            b2=rng.standard_normal(out_channels) * 0.01,
        )


def log_depth_difference(predicted: np.ndarray, sparse: SparseGrid, eps: float = EPS) -> SparseGrid:
    """``log(pred + eps) - log(lidar + eps)`` on cells carrying a LiDAR depth."""
    pred = np.asarray(predicted, dtype=np.float64)
    if pred.ndim == 3 and pred.shape[0] == 1:
        pred = pred[0]
    if pred.shape != sparse.shape:
        raise ValidationError(f"predicted depth {pred.shape} vs sparse depth {sparse.shape}")
    m = sparse.mask
    compared = pred[m]
    if not np.all(np.isfinite(compared)) or np.any(compared <= 0):
        r, c = (int(x) for x in np.argwhere(m & ~(np.isfinite(pred) & (pred > 0)))[0])
        raise ValidationError(
            f"predicted depth must be positive at compared cells; cell ({r}, {c}) "
            f"holds {float(pred[r, c])!r}"
        )
    diff = np.zeros(pred.shape)
    diff[m] = np.log(compared + eps) - np.log(sparse.values[m] + eps)
    return SparseGrid(diff, m.copy())


def conv2d_same(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Zero-padded stride-1 cross-correlation of ``(in, h, w)`` with ``(out, in, k, k)``."""
    k = weight.shape[-1]
    p = k // 2
    padded = np.pad(x, ((0, 0), (p, p), (p, p)))
    windows = sliding_window_view(padded, (k, k), axis=(1, 2))  # (in, h, w, k, k)
    return np.einsum("ihwab,oiab->ohw", windows, weight) + bias[:, None, None]


def conv2_embed(diff: SparseGrid, stack: ConvStack) -> np.ndarray:
    """Embed the difference map to ``(C_v, h, w)``; unassigned cells enter as zero."""
    x = np.where(diff.mask, diff.values, 0.0)[None]
    hidden = conv2d_same(x, stack.w1, stack.b1)
    return conv2d_same(hidden, stack.w2, stack.b2)


def attend_with_depth(
    fused: np.ndarray, params: AttentionParams, d_hat: np.ndarray, **kwargs
) -> np.ndarray:
    """Self-attention with the embedded depth difference added before LayerNorm."""
    refined, _ = self_attention(fused, params, bias=d_hat, **kwargs)
    return refined
