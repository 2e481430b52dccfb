#!/usr/bin/env python
"""
Parameter containers on top of `simic.core`.

A `Module` discovers its parameters and sub-modules from its attributes in
assignment order, so construction order fixes both the random initialization
sequence and the checkpoint layout.
"""
from __future__ import annotations

# std-lib imports
import math
from typing import Dict, Iterator, List, Tuple

# 3 party imports
import numpy as np

# project imports
from simic.core import functional as F
from simic.core.tensor import ShapeError, Tensor


def he_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> Tensor:
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros_param(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Module:
    training: bool = True

    def __init__(self):
        self._buffer_names: List[str] = []

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        setattr(self, name, np.asarray(value, dtype=np.float64))
        self._buffer_names.append(name)

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for index, child in enumerate(value):
                    yield f"{name}.{index}", child
            else:
                yield name, value

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in self._children():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, value in self._children():
            if name in self._buffer_names:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_buffers(prefix + name + ".")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Parameters followed by buffers (batch-norm running statistics), as copies."""
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        targets = {name: p.data for name, p in self.named_parameters()}
        targets.update(dict(self.named_buffers()))
        missing = sorted(set(targets) - set(state))
        unexpected = sorted(set(state) - set(targets))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing {missing}, unexpected {unexpected}")
        for name, target in targets.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != target.shape:
                raise ShapeError(f"{name}: stored shape {value.shape} differs from model shape {target.shape}")
            target[...] = value

    def train(self, mode: bool = True) -> Module:
        self.training = mode
        for _, value in self._children():
            if isinstance(value, Module):
                value.train(mode)
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.weight = he_uniform(rng, (out_channels, in_channels, kernel, kernel), in_channels * kernel * kernel)
        self.bias = zeros_param(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class DepthwiseSeparableConv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.depthwise = he_uniform(rng, (in_channels, 1, kernel, kernel), kernel * kernel)
        self.pointwise = he_uniform(rng, (out_channels, in_channels, 1, 1), in_channels)
        self.bias = zeros_param(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        return F.depthwise_separable_conv(x, self.depthwise, self.pointwise, self.bias,
                                          stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.weight = he_uniform(rng, (out_features, in_features), in_features)
        self.bias = zeros_param(out_features) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class BatchNorm2d(Module):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.eps, self.momentum = eps, momentum
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = zeros_param(channels)
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            training=self.training, eps=self.eps, momentum=self.momentum)
