#!/usr/bin/env python
# std-lib imports
from typing import Callable, Dict, List, Optional, Sequence

# 3 party imports
import numpy as np

# project imports
from simic.core.tensor import Tensor


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    """
    |a - n| / max(|a|, |n|, floor).

    Below `floor` in magnitude this turns into an absolute error scaled by
    1/floor. The default sits above the round-off of a central difference
    at h=1e-5, so gradients that are analytically zero still pass.
    """
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradcheck(
    loss_fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    num_coords: int = 20,
    h: float = 1e-5,
    seed: int = 0,
) -> Dict[int, float]:
    """
    Compares autodiff gradients with central finite differences.

    `loss_fn` must rebuild the scalar loss from the current contents of
    `inputs` on every call. For each input, `num_coords` coordinates (or all of
    them, for smaller tensors) are perturbed by +-h in place.

    Args:
        loss_fn (Callable[[], Tensor]):
            Zero-argument closure returning a scalar tensor.
        inputs (Sequence[Tensor]):
            Tensors with `requires_grad=True` to check.
        num_coords (int, optional):
            Coordinates sampled per input. Defaults to 20.
        h (float, optional):
            Finite-difference step. Defaults to 1e-5.
        seed (int, optional):
            Seed of the coordinate sampler. Defaults to 0.

    Returns:
        Dict[int, float]:
            Maximum relative error per input index.
    """
    for t in inputs:
        t.zero_grad()
    loss_fn().backward()
    analytic: List[Optional[np.ndarray]] = [None if t.grad is None else t.grad.copy() for t in inputs]

    rng = np.random.default_rng(seed)
    worst: Dict[int, float] = {}
    for index, tensor in enumerate(inputs):
        if not tensor.data.flags.c_contiguous:
            tensor.data = np.ascontiguousarray(tensor.data)
        flat = tensor.data.reshape(-1)
        count = min(num_coords, flat.size)
        coords = rng.choice(flat.size, size=count, replace=False)
        grad = np.zeros(flat.size) if analytic[index] is None else analytic[index].reshape(-1)
        errors = []
        for coord in coords:
            original = flat[coord]
            flat[coord] = original + h
            plus = loss_fn().item()
            flat[coord] = original - h
            minus = loss_fn().item()
            flat[coord] = original
            numeric = (plus - minus) / (2.0 * h)
            errors.append(relative_error(grad[coord], numeric))
        worst[index] = max(errors)
    return worst
