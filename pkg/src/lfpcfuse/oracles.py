"""Slow reference implementations used to cross-check the vectorised kernels.

Nothing here imports the kernels it checks.  Every routine is written as
loops or exhaustive enumeration so that agreement is meaningful.
"""

from __future__ import annotations

import math
from itertools import product

import numpy as np


def project_point(K, T, point) -> tuple[float, float, float] | None:
    """Hand-rolled ``K @ T @ [x, y, z, 1]``; returns ``(u, v, depth)`` or ``None`` if behind."""
    x = [float(point[0]), float(point[1]), float(point[2]), 1.0]
    cam = [sum(float(T[r][c]) * x[c] for c in range(4)) for r in range(4)]
    img = [sum(float(K[r][c]) * cam[c] for c in range(4)) for r in range(3)]
    if cam[2] <= 1e-9 or img[2] <= 1e-9:
        return None
    return img[0] / img[2], img[1] / img[2], cam[2]


def idw_nearest(refs, values, query, k: int = 3, eps: float = 1e-8):
    """Exhaustive k-nearest inverse-distance interpolation.

    ``refs`` is a sequence of coordinate tuples in tie-break order; returns
    ``(interpolated vector, neighbour indices, normalised weights)``.
    """
    dists = []
    for i, r in enumerate(refs):
        d = math.sqrt(sum((float(a) - float(b)) ** 2 for a, b in zip(r, query)))
        dists.append((d, i))
    dists.sort()
    chosen = dists[: min(k, len(dists))]
    raw = [1.0 / (d + eps) for d, _ in chosen]
    total = sum(raw)
    weights = [w / total for w in raw]
    out = np.zeros(np.asarray(values[0]).shape)
    for w, (_, i) in zip(weights, chosen):
        out = out + w * np.asarray(values[i], dtype=np.float64)
    return out, [i for _, i in chosen], weights


def interpolate_missing(scattered, mask, rect, eps: float = 1e-8) -> np.ndarray:
    """Cell-by-cell completion inside ``rect = (x_min, x_max, y_min, y_max)``."""
    f = np.asarray(scattered, dtype=np.float64)
    x_min, x_max, y_min, y_max = rect
    refs, vals = [], []
    for r in range(y_min, y_max + 1):
        for c in range(x_min, x_max + 1):
            if mask[r][c]:
                refs.append((r, c))
                vals.append(f[:, r, c])
    out = f.copy()
    for r in range(y_min, y_max + 1):
        for c in range(x_min, x_max + 1):
            if not mask[r][c]:
                out[:, r, c] = idw_nearest(refs, vals, (r, c), 3, eps)[0]
    return out


def voxel_interpolate(indices, features, resolution: float, query, eps: float = 1e-8) -> np.ndarray:
    """Voxel-to-point interpolation by scanning every occupied voxel.

    ``indices`` must already be in lexicographic order for tie breaking.
    """
    centers = [tuple((float(i) + 0.5) * resolution for i in triple) for triple in indices]
    return idw_nearest(centers, list(features), tuple(query[:3]), 3, eps)[0]


def voxel_interpolate_exhaustive(indices, features, resolution: float, queries,
                                 eps: float = 1e-8, chunk: int = 256) -> np.ndarray:
    """Full distance matrix against every voxel centre, stable sort, 3 nearest.

    Same contract as :func:`voxel_interpolate` but vectorised per chunk so that
    thousands of queries stay cheap.  No spatial index is involved.
    """
    centers = (np.asarray(indices, dtype=np.float64) + 0.5) * resolution
    feats = np.asarray(features, dtype=np.float64)
    q = np.asarray(queries, dtype=np.float64)[:, :3]
    k = min(3, centers.shape[0])
    out = np.zeros((q.shape[0], feats.shape[1]))
    for s in range(0, q.shape[0], chunk):
        qs = q[s:s + chunk]
        d2 = (qs[:, 0:1] - centers[:, 0]) ** 2
        d2 += (qs[:, 1:2] - centers[:, 1]) ** 2
        d2 += (qs[:, 2:3] - centers[:, 2]) ** 2
        d = np.sqrt(d2)
        part = np.argpartition(d, k - 1, axis=1)[:, :k]
        kth = np.take_along_axis(d, part, axis=1).max(axis=1, keepdims=True)
        pd = np.take_along_axis(d, part, axis=1)
        order = np.lexsort((part, pd), axis=1)
        nbr = np.take_along_axis(part, order, axis=1)
        # rows with a tie straddling the k-th distance are resolved by a full scan
        for r in np.flatnonzero((d <= kth).sum(axis=1) > k):
            cand = np.flatnonzero(d[r] <= kth[r, 0])  # ascending index order
            nbr[r] = cand[np.argsort(d[r, cand], kind="stable")][:k]
        dk = np.take_along_axis(d, nbr, axis=1)
        w = 1.0 / (dk + eps)
        w = w / w.sum(axis=1, keepdims=True)
        out[s:s + chunk] = (w[:, :, None] * feats[nbr]).sum(axis=1)
    return out


def bounding_rect(cols, rows, h: int, w: int) -> tuple[int, int, int, int]:
    xs = [min(max(math.floor(c + 0.5), 0), w - 1) for c in cols]
    ys = [min(max(math.floor(r + 0.5), 0), h - 1) for r in rows]
    return min(xs), max(xs), min(ys), max(ys)


def attention(fused, W_Q, W_K, W_V, gamma, beta, bias=None, ln_eps: float = 1e-12):
    """Dense attention + LayerNorm evaluated cell by cell; returns ``(refined, raw, weights)``."""
    F = np.asarray(fused, dtype=np.float64)
    C, h, w = F.shape
    n = h * w
    cells = [F[:, r, c] for r in range(h) for c in range(w)]
    q = [np.asarray(W_Q).T @ x for x in cells]
    k = [np.asarray(W_K).T @ x for x in cells]
    v = [np.asarray(W_V).T @ x for x in cells]
    scale = math.sqrt(np.asarray(W_K).shape[1])
    cv = np.asarray(W_V).shape[1]
    weights = np.zeros((n, n))
    raw = np.zeros((n, cv))
    for i in range(n):
        s = [float(np.dot(q[i], k[j])) / scale for j in range(n)]
        m = max(s)
        e = [math.exp(x - m) for x in s]
        z = math.fsum(e)
        weights[i] = [x / z for x in e]
        raw[i] = sum(weights[i, j] * v[j] for j in range(n))
    total = raw.copy()
    if bias is not None:
        b = np.asarray(bias, dtype=np.float64)
        for i in range(n):
            total[i] += b[:, i // w, i % w]
    refined = np.zeros((cv, h, w))
    for i in range(n):
        row = total[i]
        mu = math.fsum(row) / cv
        var = math.fsum((x - mu) ** 2 for x in row) / cv
        refined[:, i // w, i % w] = (row - mu) / math.sqrt(var + ln_eps) * gamma + beta
    return refined, raw, weights


def conv2d_same(x, weight, bias) -> np.ndarray:
    """Four-loop zero-padded cross-correlation, ``(in, h, w)`` -> ``(out, h, w)``."""
    x = np.asarray(x, dtype=np.float64)
    cin, h, w = x.shape
    cout, _, kh, kw = weight.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((cout, h, w))
    for o in range(cout):
        for r in range(h):
            for c in range(w):
                acc = float(bias[o])
                for i in range(cin):
                    for a in range(kh):
                        for b in range(kw):
                            rr, cc = r + a - ph, c + b - pw
                            if 0 <= rr < h and 0 <= cc < w:
                                acc += weight[o, i, a, b] * x[i, rr, cc]
                out[o, r, c] = acc
    return out


def jaccard_loss(fg: set, errors: set) -> float:
    """``1 - |fg minus errors| / |fg union errors|`` for a set of mispredicted items."""
    union = fg | errors
    if not union:
        return 0.0
    return 1.0 - len(fg - errors) / len(union)


def lovasz_softmax(probs, labels, ignore: int = 255) -> float:
    """Lovasz extension via explicit prefix sets and Jaccard-loss increments."""
    p = np.asarray(probs, dtype=np.float64)
    K = p.shape[0]
    p = p.reshape(K, -1)
    y = np.asarray(labels).reshape(-1)
    keep = [i for i in range(y.size) if y[i] != ignore]
    per_class = []
    for c in sorted({int(y[i]) for i in keep}):
        fg = {i for i in keep if y[i] == c}
        err = {i: (1.0 - p[c, i]) if i in fg else p[c, i] for i in keep}
        order = sorted(keep, key=lambda i: -err[i])
        total, prefix, prev = 0.0, set(), 0.0
        for i in order:
            prefix.add(i)
            cur = jaccard_loss(fg, prefix)
            total += err[i] * (cur - prev)
            prev = cur
        per_class.append(total)
    return sum(per_class) / len(per_class) if per_class else 0.0


def cross_entropy(logits, labels, ignore: int = 255) -> float:
    s = np.asarray(logits, dtype=np.float64)
    K = s.shape[0]
    s = s.reshape(K, -1)
    y = np.asarray(labels).reshape(-1)
    terms = []
    for i in range(y.size):
        if y[i] == ignore:
            continue
        m = max(s[:, i])
        lse = m + math.log(math.fsum(math.exp(x - m) for x in s[:, i]))
        terms.append(lse - s[int(y[i]), i])
    return math.fsum(terms) / len(terms)


def central_difference(fn, x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Numerical gradient of scalar ``fn`` at ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = fn(x)
        flat[i] = orig - step
        fm = fn(x)
        flat[i] = orig
        g[i] = (fp - fm) / (2 * step)
    return grad


def confusion_iou(pred, labels, num_classes: int, ignore: int = 255):
    """Per-class IoU by counting every (label, prediction) pair."""
    tp = [0] * num_classes
    fp = [0] * num_classes
    fn = [0] * num_classes
    for p, y in zip(np.asarray(pred).reshape(-1), np.asarray(labels).reshape(-1)):
        p, y = int(p), int(y)
        if y == ignore or p == ignore:
            continue
        if p == y:
            tp[p] += 1
        else:
            fp[p] += 1
            fn[y] += 1
    iou = []
    for c in range(num_classes):
        d = tp[c] + fp[c] + fn[c]
        iou.append(tp[c] / d if d else float("nan"))
    present = [x for x in iou if not math.isnan(x)]
    return iou, (sum(present) / len(present) if present else float("nan"))


def all_labelings(n_pixels: int, n_classes: int):
    return product(range(n_classes), repeat=n_pixels)
