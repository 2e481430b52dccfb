#!/usr/bin/env python
"""
Micro-scale CNN backbones.

Each keeps the defining mechanism of its family: identity skips (residual),
jointly scaled depth and width (compound), or depthwise-separable factorized
convolutions (depthwise). All map (N, C, H, W) to (N, d, H/8, W/8) through a
stride-1 stem, three stride-2 stages and a 1x1 projection to d channels.
"""
from __future__ import annotations

# std-lib imports
import math
from typing import List

# 3 party imports
import numpy as np

# project imports
from simic.core import functional as F
from simic.core.tensor import ShapeError, Tensor
from simic.model.config import COMPOUND_DEPTH_BASE, COMPOUND_WIDTH_BASE, DOWNSAMPLING, ModelConfig
from simic.model.layers import BatchNorm2d, Conv2d, DepthwiseSeparableConv2d, Module


class ResidualBlock(Module):
    """Pre-activation block: x + conv(relu(bn(conv(relu(bn(x)))))), with a strided 1x1 skip when shapes change."""

    def __init__(self, in_channels: int, out_channels: int, stride: int, rng: np.random.Generator):
        super().__init__()
        self.bn1 = BatchNorm2d(in_channels)
        self.conv1 = Conv2d(in_channels, out_channels, 3, rng, stride=stride, padding=1)
        self.bn2 = BatchNorm2d(out_channels)
        self.conv2 = Conv2d(out_channels, out_channels, 3, rng, stride=1, padding=1)
        needs_projection = stride != 1 or in_channels != out_channels
        self.skip = Conv2d(in_channels, out_channels, 1, rng, stride=stride) if needs_projection else None

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv1(F.relu(self.bn1(x)))
        h = self.conv2(F.relu(self.bn2(h)))
        shortcut = x if self.skip is None else self.skip(x)
        return F.add(shortcut, h)


class ConvBlock(Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int, rng: np.random.Generator,
                 separable: bool = False):
        super().__init__()
        conv = DepthwiseSeparableConv2d if separable else Conv2d
        self.conv = conv(in_channels, out_channels, 3, rng, stride=stride, padding=1)
        self.bn = BatchNorm2d(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(self.bn(self.conv(x)))


class Stage(Module):
    """A downsampling block followed by `depth - 1` stride-1 blocks."""

    def __init__(self, blocks: List[Module]):
        super().__init__()
        self.blocks = blocks

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


def residual_stage(in_channels: int, out_channels: int, rng: np.random.Generator, depth: int = 2) -> Stage:
    blocks = [ResidualBlock(in_channels, out_channels, 2, rng)]
    blocks += [ResidualBlock(out_channels, out_channels, 1, rng) for _ in range(depth - 1)]
    return Stage(blocks)


def conv_stage(in_channels: int, out_channels: int, rng: np.random.Generator, depth: int = 2,
               separable: bool = False) -> Stage:
    blocks = [ConvBlock(in_channels, out_channels, 2, rng, separable)]
    blocks += [ConvBlock(out_channels, out_channels, 1, rng, separable) for _ in range(depth - 1)]
    return Stage(blocks)


def compound_scaling(widths: List[int], phi: float, base_depth: int = 1) -> tuple:
    """Stage widths scaled by 1.1**phi and per-stage depth by 1.2**phi, both rounded up."""
    scaled = [int(math.ceil(w * COMPOUND_WIDTH_BASE ** phi)) for w in widths]
    depth = int(math.ceil(base_depth * COMPOUND_DEPTH_BASE ** phi))
    return scaled, depth


class Backbone(Module):
    def __init__(self, config: ModelConfig, in_channels: int, rng: np.random.Generator):
        super().__init__()
        self.kind = config.backbone
        widths = list(config.widths)
        if self.kind == "compound":
            widths, depth = compound_scaling(widths, config.compound_phi)
        else:
            depth = 2

        self.stem = Conv2d(in_channels, widths[0], 3, rng, stride=1, padding=1)
        stages = []
        previous = widths[0]
        for width in widths:
            if self.kind == "residual":
                stages.append(residual_stage(previous, width, rng, depth))
            else:
                stages.append(conv_stage(previous, width, rng, depth, separable=self.kind == "depthwise"))
            previous = width
        self.stages = stages
        # pre-activation stacks end un-normalized
        self.final_bn = BatchNorm2d(previous) if self.kind == "residual" else None
        self.projection = Conv2d(previous, config.embed_dim, 1, rng)
        self.out_channels = config.embed_dim

    def forward(self, x: Tensor) -> Tensor:
        """
        Args:
            x (Tensor): (N, C, H, W) input, H and W at least 8.

        Returns:
            Tensor: (N, d, H // 8, W // 8) feature map (sizes rounded up per stride-2 stage).
        """
        if x.ndim != 4 or min(x.shape[2:]) < DOWNSAMPLING:
            raise ShapeError(f"backbone needs NCHW input of at least {DOWNSAMPLING}x{DOWNSAMPLING}, got {x.shape}")
        x = self.stem(x)
        if self.kind != "residual":
            x = F.relu(x)
        for stage in self.stages:
            x = stage(x)
        if self.final_bn is not None:
            x = F.relu(self.final_bn(x))
        return self.projection(x)
