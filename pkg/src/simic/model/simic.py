#!/usr/bin/env python
"""
The structure-conditioned regression network.

Image -> (coordinate channels) -> backbone -> either global average pooling or
attention over the feature positions -> two-layer regression head. In half
mode the (width, height) structure vector is embedded into the query (or, with
no attention, concatenated to the pooled features) and only the radius is
predicted.
"""
from __future__ import annotations

# std-lib imports
import logging
from dataclasses import dataclass
from typing import Optional

# 3 party imports
import numpy as np

# project imports
from simic.core import functional as F
from simic.core.tensor import ShapeError, Tensor, no_grad
from simic.model.attention import AdditiveAttention, MultiHeadAttention
from simic.model.backbones import Backbone
from simic.model.config import ModelConfig
from simic.model.layers import Conv2d, Linear, Module, he_uniform
from simic.model.normalizer import Normalizer

logger = logging.getLogger(__name__)


def coordinate_axis(size: int) -> np.ndarray:
    """`size` points linearly spaced over [-1, 1]; a single point sits at 0."""
    if size == 1:
        return np.zeros(1)
    return np.linspace(-1.0, 1.0, size)


def add_coord_channels(images: Tensor) -> Tensor:
    """
    Appends x and y coordinate channels to a single-channel NCHW batch.

    Args:
        images (Tensor): (N, 1, H, W) input.

    Returns:
        Tensor: (N, 3, H, W); channel 0 is the input, channel 1 varies along
            the columns and channel 2 along the rows, both in [-1, 1].
    """
    if images.ndim != 4 or images.shape[1] != 1:
        raise ShapeError(f"coordinate channels need an (N, 1, H, W) input, got {images.shape}")
    n, _, height, width = images.shape
    xs = np.broadcast_to(coordinate_axis(width)[None, None, None, :], (n, 1, height, width))
    ys = np.broadcast_to(coordinate_axis(height)[None, None, :, None], (n, 1, height, width))
    return F.concat([images, Tensor(xs.copy()), Tensor(ys.copy())], axis=1)


@dataclass
class ForwardOutput:
    predictions: Tensor
    # (N, heads, Hf, Wf) when the model attends
    attention: Optional[np.ndarray] = None


class SimicModel(Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.embed_dim
        rng = np.random.default_rng(config.seed)

        in_channels = 3 if config.coord_channels else 1
        self.backbone = Backbone(config, in_channels, rng)

        if config.mode == "half":
            self.structure = Linear(2, d, rng)
        else:
            self.structure = None

        self.key_conv = self.value_conv = None
        self.free_query = None
        self.attention = None
        if config.attention != "none":
            self.key_conv = Conv2d(d, d, 1, rng)
            self.value_conv = Conv2d(d, d, 1, rng)
            if config.mode == "full":
                self.free_query = he_uniform(rng, (d,), d)
            if config.attention == "additive":
                self.attention = AdditiveAttention(d, rng)
            else:
                self.attention = MultiHeadAttention(d, config.heads, rng)

        head_in = 2 * d if (config.attention == "none" and config.mode == "half") else d
        self.head_hidden = Linear(head_in, d, rng)
        self.head_out = Linear(d, config.outputs, rng)

    def embed_structure(self, structure: Tensor) -> Tensor:
        """Projects the normalized (N, 2) structure vector to the (N, d) query."""
        if self.structure is None:
            raise ValueError(f"{self.config.name} has no structure input")
        if structure.ndim != 2 or structure.shape[1] != 2:
            raise ShapeError(f"structure input must be (N, 2), got {structure.shape}")
        return self.structure(structure)

    def _positions(self, conv: Conv2d, features: Tensor) -> Tensor:
        n, d, hf, wf = features.shape
        flat = F.reshape(conv(features), (n, d, hf * wf))
        return F.transpose(flat, (0, 2, 1))

    def forward(self, images: Tensor, structure: Optional[Tensor] = None) -> ForwardOutput:
        """
        Runs the network on a normalized image batch.

        Args:
            images (Tensor):
                (N, 1, H, W) pixels scaled to [0, 1].
            structure (Tensor, optional):
                (N, 2) normalized width/height. Defaults to `None`; required in
                half mode and rejected in full mode.

        Returns:
            ForwardOutput: (N, 3) or (N, 1) normalized predictions and, when the
                model attends, the (N, heads, Hf, Wf) attention weights.

        Raises:
            ValueError: If the structure input does not match the mode.
        """
        config = self.config
        if config.mode == "full" and structure is not None:
            raise ValueError("structure input given to a full-prediction model")
        if config.mode == "half" and structure is None:
            raise ValueError("half-prediction model needs the width/height structure input")
        if structure is not None and structure.shape[0] != images.shape[0]:
            raise ShapeError(f"structure batch {structure.shape[0]} differs from image batch {images.shape[0]}")

        x = add_coord_channels(images) if config.coord_channels else images
        features = self.backbone(x)
        n, _, hf, wf = features.shape

        maps = None
        if self.attention is None:
            pooled = F.global_avg_pool(features)
            if structure is not None:
                pooled = F.concat([pooled, self.embed_structure(structure)], axis=1)
            hidden = pooled
        else:
            keys = self._positions(self.key_conv, features)
            values = self._positions(self.value_conv, features)
            if structure is not None:
                query = self.embed_structure(structure)
            else:
                query = F.add(Tensor(np.zeros((n, config.embed_dim))), self.free_query)
            hidden, weights = self.attention(query, keys, values)
            maps = weights.data.reshape(n, -1, hf, wf).copy()

        out = self.head_out(F.relu(self.head_hidden(hidden)))
        return ForwardOutput(predictions=out, attention=maps)

    def predict(
        self,
        images: np.ndarray,
        normalizer: Normalizer,
        width_height_um: Optional[np.ndarray] = None,
        batch_size: int = 32,
    ) -> np.ndarray:
        """
        De-normalized predictions in micrometres for a uint8 (N, H, W) stack, in eval mode.

        Returns (N, 3) width/height/radius in full mode and (N, 1) radius in half mode.
        """
        outputs = []
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                for start in range(0, len(images), batch_size):
                    batch = images_to_tensor(images[start:start + batch_size])
                    structure = None
                    if self.config.mode == "half":
                        if width_height_um is None:
                            raise ValueError("half-prediction model needs width/height inputs")
                        structure = Tensor(normalizer.normalize_structure(width_height_um[start:start + batch_size]))
                    outputs.append(self.forward(batch, structure).predictions.data)
        finally:
            self.train(was_training)
        predictions = np.concatenate(outputs, axis=0) if outputs else np.zeros((0, self.config.outputs))
        return normalizer.denormalize(predictions, self.config.mode)


def images_to_tensor(images: np.ndarray) -> Tensor:
    """uint8 (N, H, W) to a float (N, 1, H, W) tensor in [0, 1]."""
    images = np.asarray(images)
    if images.ndim != 3:
        raise ShapeError(f"expected an (N, H, W) image stack, got {images.shape}")
    return Tensor(images[:, None, :, :].astype(np.float64) / 255.0)


def build(config: ModelConfig) -> SimicModel:
    """Allocates and initializes a model; equal configs (seed included) give identical weights."""
    model = SimicModel(config)
    logger.debug("built %s with %d parameters", config.name, model.num_parameters())
    return model
