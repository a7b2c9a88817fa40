import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from auxseg.layers import softmax_channels
from auxseg.tasks import (PROB_CLAMP, confusion, depth_loss, iou_metrics, predict_labels,
                          seg_loss)
from auxseg.tensor import Tensor, grad_check


def test_uniform_probs_give_log_classes():
    probs = Tensor(np.full((2, 4, 3, 3), 0.25))
    labels = np.random.default_rng(0).integers(0, 4, size=(2, 3, 3))
    assert seg_loss(probs, labels).item() == pytest.approx(math.log(4), abs=1e-15)


def test_one_hot_probs_give_zero():
    labels = np.array([[[0, 1], [2, 3]]])
    probs = np.moveaxis(np.eye(4)[labels], -1, 1)
    assert seg_loss(Tensor(probs), labels).item() == 0.0


def test_two_pixel_hand_value():
    probs = np.zeros((1, 2, 1, 2))
    probs[0, :, 0, 0] = [0.5, 0.5]
    probs[0, :, 0, 1] = [0.75, 0.25]
    loss = seg_loss(Tensor(probs), np.array([[[0, 1]]])).item()
    assert loss == pytest.approx((math.log(2) + math.log(4)) / 2, abs=1e-12)
    assert loss == pytest.approx(1.039721, abs=1e-6)


def test_zero_probability_is_clamped():
    probs = np.zeros((1, 2, 1, 1))
    probs[0, 0] = 1.0
    loss = seg_loss(Tensor(probs), np.array([[[1]]])).item()
    assert loss == pytest.approx(-math.log(PROB_CLAMP))


def test_seg_loss_ignore_and_label_errors():
    probs = Tensor(np.full((1, 2, 1, 2), 0.5))
    with pytest.raises(ValueError):
        seg_loss(probs, np.array([[[0, 1]]]), ignore=np.ones((1, 1, 2), bool))
    with pytest.raises(ValueError):
        seg_loss(probs, np.array([[[0, 2]]]))
    ign = np.array([[[False, True]]])
    assert seg_loss(probs, np.array([[[0, 1]]]), ignore=ign).item() == pytest.approx(math.log(2))


def test_seg_loss_gradient_through_softmax():
    rng = np.random.default_rng(1)
    logits = Tensor(rng.normal(size=(2, 3, 2, 2)), requires_grad=True)
    labels = rng.integers(0, 3, size=(2, 2, 2))
    rep = grad_check(lambda: seg_loss(softmax_channels(logits), labels), [logits])
    assert rep.passed, rep
    # d/dz of CE(softmax) is (p - onehot) / n_pixels
    logits.zero_grad()
    seg_loss(softmax_channels(logits), labels).backward()
    p = softmax_channels(Tensor(logits.data)).data
    onehot = np.moveaxis(np.eye(3)[labels], -1, 1)
    assert np.allclose(logits.grad, (p - onehot) / labels.size, atol=1e-14)


def test_depth_loss_values():
    assert depth_loss(Tensor(np.zeros((1, 1, 2, 2))), np.full((1, 1, 2, 2), 0.5)).item() == 0.5
    x = np.random.default_rng(2).uniform(size=(2, 1, 3, 3))
    assert depth_loss(Tensor(x + 0.3), x).item() == pytest.approx(0.3, abs=1e-15)
    with pytest.raises(ValueError):
        depth_loss(Tensor(np.zeros((1, 1, 2, 2))), np.zeros((1, 1, 2, 3)))


depth_maps = arrays(np.float64, (1, 1, 3, 4), elements=st.floats(-2, 2, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(depth_maps, depth_maps, depth_maps)
def test_depth_loss_is_a_metric(a, b, c):
    d = lambda x, y: depth_loss(Tensor(x), y).item()
    assert d(a, b) == pytest.approx(d(b, a), abs=1e-15)
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-12
    assert d(a, a) == 0.0


def brute_confusion(pred, true, k):
    cm = np.zeros((k, k), dtype=np.int64)
    for p, t in zip(pred.ravel(), true.ravel()):
        cm[t, p] += 1
    return cm


def test_confusion_matches_brute_force(rng):
    for _ in range(20):
        pred = rng.integers(0, 5, size=(3, 6, 7))
        true = rng.integers(0, 5, size=(3, 6, 7))
        assert np.array_equal(confusion(pred, true, 5), brute_confusion(pred, true, 5))


def test_confusion_ignore_mask():
    pred = np.array([[0, 1, 1]])
    true = np.array([[0, 1, 0]])
    cm = confusion(pred, true, 2, ignore=np.array([[False, False, True]]))
    assert np.array_equal(cm, [[1, 0], [0, 1]])


def test_iou_hand_example():
    # class 0: TP 2, FP 1, FN 2 -> 2/5; class 1: TP 3, FP 2, FN 1 -> 3/6
    cm = np.array([[2, 2], [1, 3]])
    r = iou_metrics(cm)
    assert r.per_class[0] == pytest.approx(0.4)
    assert r.per_class[1] == pytest.approx(0.5)
    assert r.mean_iou == pytest.approx(0.45)


def test_absent_class_left_out_of_mean():
    cm = np.array([[3, 0, 0], [0, 1, 0], [0, 0, 0]])
    r = iou_metrics(cm)
    assert r.per_class[2] is None and r.mean_iou == 1.0
    with pytest.raises(ValueError):
        iou_metrics(np.zeros((3, 3), int))


def test_iou_invariant_under_class_relabeling(rng):
    pred = rng.integers(0, 4, size=500)
    true = rng.integers(0, 4, size=500)
    perm = rng.permutation(4)
    a = iou_metrics(confusion(pred, true, 4))
    b = iou_metrics(confusion(perm[pred], perm[true], 4))
    assert b.mean_iou == pytest.approx(a.mean_iou, abs=1e-15)
    for c in range(4):
        assert b.per_class[perm[c]] == pytest.approx(a.per_class[c], abs=1e-15)


def test_predict_labels_ties_go_low():
    probs = np.zeros((1, 3, 1, 2))
    probs[0, :, 0, 0] = [0.4, 0.4, 0.2]
    probs[0, :, 0, 1] = [0.1, 0.3, 0.6]
    assert predict_labels(probs).tolist() == [[[0, 2]]]
