"""Combining the segmentation and depth losses into one objective.

Three rules, all of the form ``total = w_seg * L_seg + w_depth * L_depth``:

* fixed   - constant weights (e.g. 400:1, 1000:1)
* twb     - w_seg = L_depth, w_depth = L_seg          -> total = 2 L_seg L_depth
* ftwb    - w_seg = L_seg L_depth, w_depth = L_seg    -> total = (L_seg + 1) L_seg L_depth

Weights are recomputed every batch from that batch's losses. By default they
are detached (batch constants); ``detach=False`` keeps them in the graph, which
turns the twb objective into the plain product 2 L_seg L_depth.

An optional exponential moving average smooths the weights across batches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .tensor import Tensor, add, detach, mul, scalar_mul

KINDS = ("fixed", "twb", "ftwb")


@dataclass
class CombineResult:
    lambda_seg: float
    lambda_depth: float
    total: Tensor
    loss_seg: float
    loss_depth: float


def _check_losses(ls: Tensor, ld: Tensor, nonneg: bool) -> None:
    for name, t in (("L_seg", ls), ("L_depth", ld)):
        v = t.item()
        if not math.isfinite(v):
            raise FloatingPointError(f"{name} is not finite ({v})")
        if nonneg and v < 0:
            raise ValueError(f"{name} must be >= 0, got {v}")


def _combine(ls: Tensor, ld: Tensor, w_seg: Tensor, w_depth: Tensor) -> CombineResult:
    total = add(mul(w_seg, ls), mul(w_depth, ld))
    return CombineResult(w_seg.item(), w_depth.item(), total, ls.item(), ld.item())


def combine_fixed(ls: Tensor, ld: Tensor, lambda_seg: float, lambda_depth: float) -> CombineResult:
    if not (lambda_seg > 0 and lambda_depth > 0):
        raise ValueError(f"fixed weights must be positive, got ({lambda_seg}, {lambda_depth})")
    _check_losses(ls, ld, nonneg=False)
    total = add(scalar_mul(ls, lambda_seg), scalar_mul(ld, lambda_depth))
    return CombineResult(float(lambda_seg), float(lambda_depth), total, ls.item(), ld.item())


def _raw_weights(kind: str, ls: Tensor, ld: Tensor, detached: bool) -> tuple[Tensor, Tensor]:
    if kind == "twb":
        w_seg, w_depth = ld, ls
    elif kind == "ftwb":
        w_seg, w_depth = mul(ls, ld), ls
    else:
        raise ValueError(f"no loss-derived weights for kind {kind!r}")
    if detached:
        w_seg, w_depth = detach(w_seg), detach(w_depth)
    return w_seg, w_depth


def combine_twb(ls: Tensor, ld: Tensor, detached: bool = True) -> CombineResult:
    _check_losses(ls, ld, nonneg=True)
    return _combine(ls, ld, *_raw_weights("twb", ls, ld, detached))


def combine_ftwb(ls: Tensor, ld: Tensor, detached: bool = True) -> CombineResult:
    _check_losses(ls, ld, nonneg=True)
    return _combine(ls, ld, *_raw_weights("ftwb", ls, ld, detached))


@dataclass
class WeightingStrategy:
    """Per-batch weighting rule with optional EMA smoothing of the weights.

    ``ema_beta`` is the decay in (0, 1); None disables smoothing. The EMA
    state is seeded with the first raw weights it sees.
    """

    kind: str
    lambda_seg: float = 1.0
    lambda_depth: float = 1.0
    ema_beta: float | None = None
    detached: bool = True
    ema_state: tuple[float, float] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown weighting kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "fixed" and not (self.lambda_seg > 0 and self.lambda_depth > 0):
            raise ValueError("fixed weights must be positive")
        if self.ema_beta is not None and not 0 < self.ema_beta < 1:
            raise ValueError(f"EMA decay must lie in (0, 1), got {self.ema_beta}")

    @classmethod
    def fixed(cls, lambda_seg: float, lambda_depth: float = 1.0) -> "WeightingStrategy":
        return cls("fixed", lambda_seg, lambda_depth)

    def reset(self) -> None:
        self.ema_state = None

    def apply_ema(self, raw_seg: Tensor, raw_depth: Tensor) -> tuple[Tensor, Tensor]:
        """lam <- beta * lam_prev + (1 - beta) * raw; returns the smoothed weights
        and updates the state. Gradient (if any) flows through the raw part only."""
        if self.ema_beta is None:
            raise ValueError("EMA is not configured for this strategy")
        if self.ema_state is None:
            smoothed = (scalar_mul(raw_seg, 1.0), scalar_mul(raw_depth, 1.0))
        else:
            b = self.ema_beta
            smoothed = tuple(add(scalar_mul(raw, 1.0 - b), prev * b)
                             for raw, prev in zip((raw_seg, raw_depth), self.ema_state))
        self.ema_state = (smoothed[0].item(), smoothed[1].item())
        return smoothed

    def step(self, ls: Tensor, ld: Tensor) -> CombineResult:
        """Weights for this batch and the combined objective."""
        if self.kind == "fixed":
            return combine_fixed(ls, ld, self.lambda_seg, self.lambda_depth)
        _check_losses(ls, ld, nonneg=True)
        w_seg, w_depth = _raw_weights(self.kind, ls, ld, self.detached)
        if self.ema_beta is not None:
            w_seg, w_depth = self.apply_ema(w_seg, w_depth)
        return _combine(ls, ld, w_seg, w_depth)

