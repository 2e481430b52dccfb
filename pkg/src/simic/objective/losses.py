#!/usr/bin/env python
# project imports
from simic.core import functional as F
from simic.core.tensor import Tensor

REDUCTIONS = ("sum", "mean")


def huber_loss(pred: Tensor, target: Tensor, delta: float = 1.0, reduction: str = "sum") -> Tensor:
    """
    Scaled Huber loss: e^2 / (2 delta) where |e| <= delta, |e| - delta / 2 elsewhere.

    Both branches give delta / 2 at |e| = delta and the slope is continuous
    there (e / delta meets sign(e)). Multi-target predictions contribute the
    unweighted sum of their per-target losses.

    Args:
        pred (Tensor):
            Predictions, any shape.
        target (Tensor):
            Targets of the same shape.
        delta (float, optional):
            Threshold between the quadratic and linear branches. Defaults to 1.0.
        reduction (str, optional):
            "sum" over all elements, or "mean". Defaults to "sum".

    Raises:
        ValueError: If `delta <= 0` or `reduction` is unknown.
    """
    if delta <= 0:
        raise ValueError(f"huber delta must be positive, got {delta}")
    if reduction not in REDUCTIONS:
        raise ValueError(f"reduction must be one of {REDUCTIONS}, got {reduction!r}")
    return F.huber(pred, target, delta=delta, reduction=reduction)
