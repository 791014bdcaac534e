import math

import numpy as np
import pytest

from lfpcfuse import losses, oracles
from lfpcfuse.errors import ValidationError
from lfpcfuse.losses import (
    IGNORE,
    ImageLossTerms,
    LossWeights,
    cross_entropy,
    lovasz_softmax,
    mean_iou,
    segmentation_loss,
    softmax,
    total_image_loss,
    total_loss,
    total_point_loss,
)


def test_uniform_logits_give_ln_classes():
    loss, _ = cross_entropy(np.zeros((15, 3, 4)), np.arange(12).reshape(3, 4) % 15)
    assert loss == pytest.approx(math.log(15), abs=1e-12)
    assert math.log(15) == pytest.approx(2.708, abs=1e-3)


def test_ce_decreases_with_margin():
    labels = np.array([1, 0, 2])
    prev = np.inf
    for margin in (0.0, 1.0, 3.0, 10.0, 30.0):
        logits = np.zeros((3, 3))
        logits[labels, np.arange(3)] = margin
        loss, _ = cross_entropy(logits, labels)
        assert loss < prev
        prev = loss
    assert prev < 1e-12


def test_ce_gradient_fd(rng):
    logits = rng.standard_normal((4, 5, 5))
    labels = rng.integers(0, 4, (5, 5))
    labels[0, 0] = IGNORE
    _, grad = cross_entropy(logits, labels)
    fd = oracles.central_difference(lambda x: cross_entropy(x, labels)[0], logits)
    np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-10)
    assert not grad[:, 0, 0].any()


def test_ce_matches_loop_oracle(rng):
    logits = rng.standard_normal((6, 40)) * 4
    labels = rng.integers(0, 6, 40)
    labels[::7] = IGNORE
    assert cross_entropy(logits, labels)[0] == pytest.approx(oracles.cross_entropy(logits, labels), abs=1e-12)


def test_ce_rejects_bad_labels():
    with pytest.raises(ValidationError, match="outside"):
        cross_entropy(np.zeros((3, 2)), np.array([0, 3]))
    with pytest.raises(ValidationError, match="non-ignored"):
        cross_entropy(np.zeros((3, 2)), np.array([IGNORE, IGNORE]))
    with pytest.raises(ValidationError, match="do not match"):
        cross_entropy(np.zeros((3, 2)), np.array([0, 1, 2]))


def test_lovasz_perfect_is_zero():
    labels = np.array([0, 1, 2, 1])
    probs = np.eye(3)[:, labels]
    assert lovasz_softmax(probs, labels) == 0.0


def test_lovasz_single_pixel():
    probs = np.array([[0.3], [0.7]])
    assert lovasz_softmax(probs, np.array([0])) == pytest.approx(0.7, abs=1e-15)


def test_lovasz_matches_prefix_oracle(rng):
    for _ in range(50):
        probs = softmax(rng.standard_normal((3, 6)) * 2)
        labels = rng.integers(0, 3, 6)
        assert abs(lovasz_softmax(probs, labels) - oracles.lovasz_softmax(probs, labels)) <= 1e-12


def test_lovasz_ignores_label():
    probs = softmax(np.array([[2.0, 0.0, 1.0], [0.0, 1.0, 3.0]]))
    a = lovasz_softmax(probs, np.array([0, 1, IGNORE]))
    b = lovasz_softmax(probs[:, :2], np.array([0, 1]))
    assert a == b


def test_lovasz_rejects_unnormalised():
    with pytest.raises(ValidationError, match="sum to 1"):
        lovasz_softmax(np.array([[0.5], [0.7]]), np.array([0]))


# -- totals -------------------------------------------------------------------------


def test_totals_zero_and_weighted(rng):
    zero = ImageLossTerms(0, 0, 0, 0, 0, [0, 0], [0, 0])
    assert total_image_loss(zero) == 0.0
    v = rng.uniform(0, 3, 7)
    sides_ce, sides_lv = list(rng.uniform(0, 3, 8)), list(rng.uniform(0, 1, 8))
    t = ImageLossTerms(*v[:5], sides_ce, sides_lv)
    expected = v[0] + v[1] + v[4] + v[2] + v[3] + 0.5 * math.fsum(sides_ce) + 0.5 * math.fsum(sides_lv)
    assert abs(total_image_loss(t) - expected) <= 1e-12
    annihilated = total_image_loss(t, LossWeights(0.0, 0.0))
    assert abs(annihilated - (v[0] + v[1] + v[2] + v[3] + v[4])) <= 1e-12


def test_single_view_total():
    t = ImageLossTerms(1.0, 2.0, 3.0, 4.0)
    assert total_image_loss(t) == 10.0
    assert total_loss(10.0, 0.0) == 10.0 and total_loss(2.5, 1.25) == 3.75


def test_loss_weights_validated():
    with pytest.raises(ValidationError):
        LossWeights(-1.0, 0.5)


def test_point_total_perfect_and_uniform():
    y = np.array([0, 1, 2, 3])
    peaked = np.full((15, 4), -1e3)
    peaked[y, np.arange(4)] = 1e3
    assert total_point_loss(peaked, y, peaked, y) < 1e-12
    uniform = np.zeros((15, 4))
    total = total_point_loss(uniform, y, peaked, y)
    lov = lovasz_softmax(softmax(uniform), y)
    assert total == pytest.approx(math.log(15) + lov, abs=1e-12)
    ce, lv = segmentation_loss(uniform, y)
    assert (ce, lv) == (pytest.approx(math.log(15)), lov)


# -- metric ---------------------------------------------------------------------------


def test_miou_perfect_and_disjoint():
    y = np.array([[0, 1], [2, 2]])
    iou, miou = mean_iou(y, y, 4)
    assert miou == 1.0 and math.isnan(iou[3])
    iou, miou = mean_iou(np.zeros(4, int), np.ones(4, int), 3)
    assert iou[0] == 0.0 and iou[1] == 0.0 and miou == 0.0


def test_miou_matches_recount(rng):
    pred = rng.integers(0, 3, (8, 8))
    labels = rng.integers(0, 3, (8, 8))
    labels[0, :3] = IGNORE
    iou, miou = mean_iou(pred, labels, 3)
    ref_iou, ref_miou = oracles.confusion_iou(pred, labels, 3)
    np.testing.assert_allclose(iou, ref_iou, atol=1e-15)
    assert miou == pytest.approx(ref_miou, abs=1e-15)


def test_confusion_rows_are_labels():
    cm = losses.confusion_matrix(np.array([1, 1, 0]), np.array([0, 1, 0]), 2)
    assert cm.tolist() == [[1, 1], [0, 1]]
