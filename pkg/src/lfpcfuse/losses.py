"""Segmentation losses, their aggregation across heads, and the IoU metric.

Logits and probabilities carry the class axis first: ``(K, ...)`` with labels
shaped ``(...)``.  Label ``IGNORE`` is excluded from every reduction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from lfpcfuse.errors import ValidationError

IGNORE = 255
NUM_CLASSES = 15


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = 0.5
    alpha2: float = 0.5

    def __post_init__(self) -> None:
        for name in ("alpha1", "alpha2"):
            a = getattr(self, name)
            if not (np.isfinite(a) and a >= 0):
                raise ValidationError(f"{name} must be finite and non-negative, got {a}")


def _flatten(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim < 1 or s.shape[1:] != y.shape:
        raise ValidationError(f"scores {s.shape} do not match labels {y.shape} (class axis first)")
    if not np.all(np.isfinite(s)):
        raise ValidationError("scores contain non-finite values")
    k = s.shape[0]
    y = y.reshape(-1).astype(np.int64)
    bad = (y != IGNORE) & ((y < 0) | (y >= k))
    if np.any(bad):
        raise ValidationError(f"label {int(y[bad][0])} outside [0, {k}) and not {IGNORE}")
    return s.reshape(k, -1), y


def softmax(logits: np.ndarray, axis: int = 0) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood over non-ignored cells, with the logit gradient."""
    shape = np.shape(logits)
    s, y = _flatten(logits, labels)
    keep = y != IGNORE
    count = int(keep.sum())
    if count == 0:
        raise ValidationError("cross entropy needs at least one non-ignored label")
    shifted = s - s.max(axis=0, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=0))
    cols = np.flatnonzero(keep)
    nll = logz[cols] - shifted[y[cols], cols]
    grad = np.exp(shifted - logz)
    grad[y[cols], cols] -= 1.0
    grad[:, ~keep] = 0.0
    grad /= count
    return float(nll.sum() / count), grad.reshape(shape)


def lovasz_grad(gt_sorted: np.ndarray) -> np.ndarray:
    """Gradient of the Lovasz extension of the Jaccard loss for a sorted foreground indicator."""
    gts = gt_sorted.sum()
    intersection = gts - np.cumsum(gt_sorted)
    union = gts + np.cumsum(1.0 - gt_sorted)
    jaccard = 1.0 - intersection / union
    if jaccard.size > 1:
        jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def lovasz_softmax(probs: np.ndarray, labels: np.ndarray, tol: float = 1e-6) -> float:
    """Lovasz-Softmax averaged over the classes present in ``labels``."""
    p, y = _flatten(probs, labels)
    keep = y != IGNORE
    p, y = p[:, keep], y[keep]
    if p.size and (np.any(p < -tol) or np.max(np.abs(p.sum(axis=0) - 1.0)) > tol):
        raise ValidationError("probabilities must be non-negative and sum to 1 per cell")
    losses = []
    for c in np.unique(y):
        fg = (y == c).astype(np.float64)
        errors = np.abs(fg - p[c])
        order = np.argsort(-errors, kind="stable")
        losses.append(float(np.dot(errors[order], lovasz_grad(fg[order]))))
    return float(np.mean(losses)) if losses else 0.0


def segmentation_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """``(cross_entropy, lovasz)`` for one prediction head."""
    ce, _ = cross_entropy(logits, labels)
    return ce, lovasz_softmax(softmax(logits, axis=0), labels)


@dataclass
class ImageLossTerms:
    """Per-term image-branch losses.

    ``fused_lovasz`` is only counted in the multi-view total; with no side views
    the single-view sum applies.
    """

    center_ce: float
    center_lovasz: float
    align: float
    fused_ce: float
    fused_lovasz: float = 0.0
    side_ce: Sequence[float] = field(default_factory=list)
    side_lovasz: Sequence[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.side_ce) != len(self.side_lovasz):
            raise ValidationError("side-view CE and Lovasz lists differ in length")


def total_image_loss(terms: ImageLossTerms, weights: LossWeights = LossWeights()) -> float:
    if not terms.side_ce:
        return terms.center_ce + terms.center_lovasz + terms.fused_ce + terms.align
    return (
        terms.center_ce
        + terms.center_lovasz
        + terms.fused_lovasz
        + terms.align
        + terms.fused_ce
        + weights.alpha1 * float(np.sum(terms.side_ce))
        + weights.alpha2 * float(np.sum(terms.side_lovasz))
    )


def total_point_loss(
    point_logits: np.ndarray,
    point_labels: np.ndarray,
    voxel_logits: np.ndarray,
    voxel_labels: np.ndarray,
) -> float:
    return sum(segmentation_loss(point_logits, point_labels)) + sum(
        segmentation_loss(voxel_logits, voxel_labels)
    )


def total_loss(image_total: float, point_total: float) -> float:
    return image_total + point_total


def confusion_matrix(pred: np.ndarray, labels: np.ndarray, num_classes: int) -> np.ndarray:
    p = np.asarray(pred).reshape(-1).astype(np.int64)
    y = np.asarray(labels).reshape(-1).astype(np.int64)
    if p.shape != y.shape:
        raise ValidationError(f"prediction size {p.size} differs from label size {y.size}")
    keep = (y != IGNORE) & (p != IGNORE)
    p, y = p[keep], y[keep]
    if np.any((p < 0) | (p >= num_classes) | (y < 0) | (y >= num_classes)):
        raise ValidationError(f"class ids must lie in [0, {num_classes})")
    return np.bincount(y * num_classes + p, minlength=num_classes**2).reshape(
        num_classes, num_classes
    )


def mean_iou(pred: np.ndarray, labels: np.ndarray, num_classes: int = NUM_CLASSES) -> tuple[np.ndarray, float]:
    """Per-class IoU (NaN for classes absent from both inputs) and their mean."""
    cm = confusion_matrix(pred, labels, num_classes)
    tp = np.diag(cm).astype(np.float64)
    denom = cm.sum(axis=0) + cm.sum(axis=1) - tp
    iou = np.full(num_classes, np.nan)
    present = denom > 0
    iou[present] = tp[present] / denom[present]
    miou = float(np.mean(iou[present])) if present.any() else float("nan")
    return iou, miou
