#!/usr/bin/env python
# std-lib imports
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

# 3 party imports
import numpy as np

# project imports
from simic.core.tensor import Tensor


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[Optional[np.ndarray]],
    states: Sequence[AdamState],
    lr: float,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """
    One in-place Adam update with bias correction.

    Weight decay is coupled: `weight_decay * p` is added to the gradient
    before the moment updates. A missing gradient counts as zero.
    """
    for p, g, state in zip(params, grads, states):
        g = np.zeros_like(p) if g is None else g
        if weight_decay:
            g = g + weight_decay * p
        state.t += 1
        state.m = beta1 * state.m + (1.0 - beta1) * g
        state.v = beta2 * state.v + (1.0 - beta2) * g * g
        m_hat = state.m / (1.0 - beta1 ** state.t)
        v_hat = state.v / (1.0 - beta2 ** state.t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class Adam:
    params: List[Tensor]
    lr: float = 1e-4
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: List[AdamState] = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError(f"weight decay must be non-negative, got {self.weight_decay}")
        self.states = [AdamState(np.zeros_like(p.data), np.zeros_like(p.data)) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.states,
                  self.lr, self.weight_decay, self.beta1, self.beta2, self.eps)
