"""Exact k-nearest-neighbour search with deterministic tie breaking.

Candidates are ranked by Euclidean distance, then by their position in the
reference array, so callers control tie order by how they lay out the
reference points (lexicographic voxel order, row-major cell order, ...).
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

# slack for catching kd-tree distances that should compare equal
_TIE_RTOL = 1e-9
_TIE_ATOL = 1e-12


def euclidean(ref: np.ndarray, query: np.ndarray) -> np.ndarray:
    diff = ref - query
    return np.sqrt(np.sum(diff * diff, axis=-1))


def nearest_k(
    ref: np.ndarray, queries: np.ndarray, k: int, tree: cKDTree | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(index, distance)`` of the ``min(k, len(ref))`` nearest references per query."""
    ref = np.asarray(ref, dtype=np.float64)
    q = np.asarray(queries, dtype=np.float64)
    n = ref.shape[0]
    kk = min(k, n)
    if q.shape[0] == 0:
        return np.zeros((0, kk), dtype=np.int64), np.zeros((0, kk))
    tree = cKDTree(ref) if tree is None else tree
    probe = min(n, kk + 3)
    dist, nbr = tree.query(q, k=probe)
    dist = dist.reshape(q.shape[0], probe)
    nbr = nbr.reshape(q.shape[0], probe).astype(np.int64)

    d = euclidean(ref[nbr], q[:, None, :])
    order = np.lexsort((nbr, d), axis=-1)[:, :kk]
    out_idx = np.take_along_axis(nbr, order, axis=-1)
    out_d = np.take_along_axis(d, order, axis=-1)

    if probe < n:
        # the probe window may have cut through a tie at the k-th distance
        radius = dist[:, kk - 1] * (1 + _TIE_RTOL) + _TIE_ATOL
        for m in np.flatnonzero(dist[:, -1] <= radius):
            cand = np.asarray(tree.query_ball_point(q[m], radius[m]), dtype=np.int64)
            dm = euclidean(ref[cand], q[m])
            pick = np.lexsort((cand, dm))[:kk]
            out_idx[m] = cand[pick]
            out_d[m] = dm[pick]
    return out_idx, out_d


def inverse_distance_weights(d: np.ndarray, eps: float) -> np.ndarray:
    """Normalised ``1 / (d + eps)`` weights along the last axis."""
    w = 1.0 / (np.asarray(d, dtype=np.float64) + eps)
    return w / w.sum(axis=-1, keepdims=True)
