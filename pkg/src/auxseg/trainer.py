"""Adam and the training protocol.

Each batch: forward, seg loss (+ depth loss), combine via the weighting
strategy, backward, one Adam step. After each epoch the model is evaluated on
the validation split and kept if its validation segmentation loss is the
lowest so far (ties keep the earlier epoch). Batches are taken in file order.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .models import ModelGraph, build, forward, save_checkpoint
from .tasks import confusion, depth_loss, iou_metrics, predict_labels, seg_loss
from .tensor import Tensor, no_grad
from .weighting import CombineResult, WeightingStrategy

# variant -> (model kind, weighting strategy factory or None)
VARIANTS = {
    "segnet": ("segnet", None),
    "aux400": ("auxnet", ("fixed", 400.0, 1.0)),
    "aux1000": ("auxnet", ("fixed", 1000.0, 1.0)),
    "auxtwb": ("auxnet", ("twb",)),
    "auxftwb": ("auxnet", ("ftwb",)),
    "fusenet": ("fusenet", None),
}


class TrainingError(RuntimeError):
    pass


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, Tensor], grads: dict[str, np.ndarray | None]) -> None:
    """One Adam update of ``params`` in place. Missing grads count as zero."""
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class TrainConfig:
    variant: str = "segnet"
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 1
    height: int = 32
    width: int = 48
    num_classes: int = 4
    ema_beta: float | None = None
    detached: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {sorted(VARIANTS)}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

    @property
    def model_kind(self) -> str:
        return VARIANTS[self.variant][0]

    def strategy(self) -> WeightingStrategy | None:
        spec = VARIANTS[self.variant][1]
        if spec is None:
            return None
        if spec[0] == "fixed":
            return WeightingStrategy("fixed", spec[1], spec[2])
        return WeightingStrategy(spec[0], ema_beta=self.ema_beta, detached=self.detached)


@dataclass
class EpochRow:
    epoch: int
    loss_seg: float
    loss_depth: float
    lambda_seg: float
    lambda_depth: float
    loss_total: float
    val_loss_seg: float
    val_miou: float
    val_iou: list[float | None]
    best: bool = False


@dataclass
class BatchRow:
    epoch: int
    batch: int
    loss_seg: float
    loss_depth: float
    lambda_seg: float
    lambda_depth: float
    loss_total: float


def _fmt(x: float | None) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return f"{x:.9g}"


@dataclass
class TrainReport:
    rows: list[EpochRow] = field(default_factory=list)
    batches: list[BatchRow] = field(default_factory=list)
    best_epoch: int | None = None
    adam_steps: int = 0

    def to_csv(self) -> str:
        k = len(self.rows[0].val_iou) if self.rows else 0
        head = ["epoch", "L_seg", "L_depth", "lambda_seg", "lambda_depth", "L_total",
                "val_L_seg", "val_miou"] + [f"val_iou_class{c}" for c in range(k)] + ["best_flag"]
        lines = [",".join(head)]
        for r in self.rows:
            vals = [str(r.epoch)] + [_fmt(v) for v in (r.loss_seg, r.loss_depth, r.lambda_seg,
                                                      r.lambda_depth, r.loss_total, r.val_loss_seg,
                                                      r.val_miou)]
            vals += [_fmt(v) for v in r.val_iou] + [str(int(r.epoch == self.best_epoch))]
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"

    def batches_csv(self) -> str:
        lines = ["epoch,batch,L_seg,L_depth,lambda_seg,lambda_depth,L_total"]
        for b in self.batches:
            lines.append(",".join([str(b.epoch), str(b.batch)] + [
                _fmt(v) for v in (b.loss_seg, b.loss_depth, b.lambda_seg, b.lambda_depth, b.loss_total)]))
        return "\n".join(lines) + "\n"


def _model_input(model: ModelGraph, images: np.ndarray, depth: np.ndarray) -> Tensor:
    if model.kind == "fusenet":
        return Tensor(np.concatenate([images, depth], axis=1))
    return Tensor(images)


def batch_losses(model: ModelGraph, images: np.ndarray, labels: np.ndarray,
                 depth: np.ndarray) -> tuple[Tensor, Tensor | None]:
    out = forward(model, _model_input(model, images, depth))
    ls = seg_loss(out["seg_probs"], labels)
    ld = depth_loss(out["depth"], depth) if "depth" in out else None
    return ls, ld


@dataclass
class EvalResult:
    loss_seg: float
    mean_iou: float
    per_class: list[float | None]
    confusion: np.ndarray


def evaluate(model: ModelGraph, dataset: Dataset, batch_size: int = 64) -> EvalResult:
    """Pixel-weighted validation seg loss and IoU. Does not touch parameters."""
    if (dataset.height, dataset.width) != (model.height, model.width):
        raise ValueError(f"dataset is {dataset.height}x{dataset.width}, model expects "
                         f"{model.height}x{model.width}")
    cm = np.zeros((model.num_classes, model.num_classes), dtype=np.int64)
    loss_sum = 0.0
    pixels = 0
    with no_grad():
        for images, labels, depth in dataset.batches(batch_size):
            out = forward(model, _model_input(model, images, depth))
            n = labels.size
            loss_sum += seg_loss(out["seg_probs"], labels).item() * n
            pixels += n
            cm += confusion(predict_labels(out["seg_probs"]), labels, model.num_classes)
    iou = iou_metrics(cm)
    return EvalResult(loss_sum / pixels, iou.mean_iou, iou.per_class, cm)


def _snapshot(model: ModelGraph) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in model.named_parameters().items()}


def train(config: TrainConfig, train_set: Dataset, val_set: Dataset,
          checkpoint_path=None) -> tuple[ModelGraph, TrainReport]:
    """Train one variant; returns the best-validation model and the report."""
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    for name, ds in (("train", train_set), ("val", val_set)):
        if (ds.height, ds.width) != (config.height, config.width):
            raise ValueError(f"{name} set is {ds.height}x{ds.width}, config says "
                             f"{config.height}x{config.width}")

    model = build(config.model_kind, 3, config.num_classes, config.height, config.width, config.seed)
    params = model.named_parameters()
    adam = AdamState(config.lr, config.beta1, config.beta2, config.eps)
    strategy = config.strategy()
    report = TrainReport()
    best_loss = math.inf
    best_params = _snapshot(model)

    for epoch in range(1, config.epochs + 1):
        sums = np.zeros(5)
        nb = 0
        for b, (images, labels, depth) in enumerate(train_set.batches(config.batch_size), start=1):
            ls, ld = batch_losses(model, images, labels, depth)
            if ld is None or strategy is None:
                res = CombineResult(1.0, 0.0, ls, ls.item(),
                                    ld.item() if ld is not None else math.nan)
            else:
                res = strategy.step(ls, ld)
            total = res.total.item()
            if not math.isfinite(total):
                raise TrainingError(f"non-finite total loss at epoch {epoch}, batch {b}")
            model.zero_grad()
            res.total.backward()
            adam_step(adam, params, {k: p.grad for k, p in params.items()})
            report.adam_steps += 1
            row = BatchRow(epoch, b, res.loss_seg, res.loss_depth, res.lambda_seg,
                           res.lambda_depth, total)
            report.batches.append(row)
            sums += [row.loss_seg, row.loss_depth, row.lambda_seg, row.lambda_depth, total]
            nb += 1
        model.zero_grad()
        means = sums / nb
        ev = evaluate(model, val_set)
        improved = ev.loss_seg < best_loss
        if improved:
            best_loss = ev.loss_seg
            best_params = _snapshot(model)
            report.best_epoch = epoch
            if checkpoint_path is not None:
                save_checkpoint(model, checkpoint_path)
        report.rows.append(EpochRow(epoch, *means.tolist(), ev.loss_seg, ev.mean_iou,
                                    ev.per_class, improved))

    best = copy.deepcopy(model)
    for k, p in best.named_parameters().items():
        p.data = best_params[k]
    return best, report


def write_report(report: TrainReport, path) -> None:
    Path(path).write_text(report.to_csv())
