"""Task losses (pixel-wise cross-entropy, depth L1) and segmentation metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _record_kink, abs_, log, mean, scalar_mul, sub

PROB_CLAMP = 1e-12


def _true_class_probs(probs: Tensor, labels: np.ndarray, keep: np.ndarray) -> Tensor:
    """Flat tensor of probs[n, labels[n,h,w], h, w] over pixels where ``keep``."""
    n_idx, h_idx, w_idx = np.nonzero(keep)
    c_idx = labels[n_idx, h_idx, w_idx]
    shape = probs.shape

    def backward(g):
        gp = np.zeros(shape)
        np.add.at(gp, (n_idx, c_idx, h_idx, w_idx), g)
        return (gp,)

    return Tensor._make(probs.data[n_idx, c_idx, h_idx, w_idx], (probs,), "pick_true_class", backward)


def _clamp_min(x: Tensor, lo: float) -> Tensor:
    live = x.data >= lo
    _record_kink(live)
    return Tensor._make(np.where(live, x.data, lo), (x,), "clamp_min", lambda g: (g * live,))


def _validate_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        bad = np.argwhere((labels < 0) | (labels >= num_classes))[0]
        raise ValueError(f"label {labels[tuple(bad)]} out of range [0, {num_classes}) "
                         f"at index {tuple(int(i) for i in bad)}")
    return labels.astype(np.int64)


def seg_loss(probs: Tensor, labels, ignore: np.ndarray | None = None) -> Tensor:
    """Mean negative log-probability of the true class over non-ignored pixels.

    ``probs`` is the softmax output [N, C, H, W]; ``labels`` is [N, H, W].
    Probabilities are clamped below at 1e-12 before the log.
    """
    n, c, h, w = probs.shape
    labels = _validate_labels(labels, c)
    if labels.shape != (n, h, w):
        raise ValueError(f"labels shape {labels.shape} does not match probs {probs.shape}")
    keep = np.ones(labels.shape, dtype=bool) if ignore is None else ~np.asarray(ignore, dtype=bool)
    if not keep.any():
        raise ValueError("seg_loss: every pixel is ignored")
    p_true = _clamp_min(_true_class_probs(probs, labels, keep), PROB_CLAMP)
    return scalar_mul(mean(log(p_true)), -1.0)


def depth_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error over all pixels."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"depth_loss: shape mismatch {pred.shape} vs {target.shape}")
    return mean(abs_(sub(pred, target)))


def predict_labels(probs) -> np.ndarray:
    """Per-pixel argmax over channels; ties resolve to the lowest class index."""
    data = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    return data.argmax(axis=1)


def confusion(pred_labels, target, num_classes: int, ignore: np.ndarray | None = None) -> np.ndarray:
    """Counts[true, pred] over non-ignored pixels."""
    pred = _validate_labels(pred_labels, num_classes)
    true = _validate_labels(target, num_classes)
    if pred.shape != true.shape:
        raise ValueError(f"confusion: shape mismatch {pred.shape} vs {true.shape}")
    if ignore is not None:
        keep = ~np.asarray(ignore, dtype=bool)
        pred, true = pred[keep], true[keep]
    flat = true.ravel() * num_classes + pred.ravel()
    return np.bincount(flat, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


@dataclass
class IoUResult:
    per_class: list[float | None]
    mean_iou: float


def iou_metrics(cm: np.ndarray) -> IoUResult:
    """IoU_c = TP / (TP + FP + FN). Classes with empty union are reported as None
    and left out of the mean."""
    cm = np.asarray(cm)
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    if not (union > 0).any():
        raise ValueError("iou_metrics: no class has a nonzero union")
    per_class = [float(tp[c] / union[c]) if union[c] > 0 else None for c in range(len(tp))]
    present = [v for v in per_class if v is not None]
    return IoUResult(per_class, float(sum(present) / len(present)))
