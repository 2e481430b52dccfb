#!/usr/bin/env python
from __future__ import annotations

# std-lib imports
from dataclasses import dataclass
from typing import Dict, List

# 3 party imports
import numpy as np

TARGETS = ("width_um", "height_um", "radius_um")


@dataclass
class Normalizer:
    """
    Per-target z-score statistics of the training split.

    Width and height statistics also normalize the structure input of half
    mode. A zero standard deviation is replaced by 1.0.
    """

    mean: List[float]
    std: List[float]

    @classmethod
    def fit(cls, labels: np.ndarray) -> Normalizer:
        labels = np.asarray(labels, dtype=np.float64)
        if labels.ndim != 2 or labels.shape[1] != 3 or labels.shape[0] < 1:
            raise ValueError(f"expected (N, 3) width/height/radius labels, got {labels.shape}")
        std = labels.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(mean=labels.mean(axis=0).tolist(), std=std.tolist())

    @classmethod
    def identity(cls) -> Normalizer:
        return cls(mean=[0.0, 0.0, 0.0], std=[1.0, 1.0, 1.0])

    def _columns(self, mode: str) -> slice:
        return slice(0, 3) if mode == "full" else slice(2, 3)

    def normalize_targets(self, labels: np.ndarray, mode: str) -> np.ndarray:
        """(N, 3) labels to (N, 3) in full mode or (N, 1) radius in half mode."""
        cols = self._columns(mode)
        mean, std = np.asarray(self.mean)[cols], np.asarray(self.std)[cols]
        return (np.asarray(labels, dtype=np.float64)[:, cols] - mean) / std

    def denormalize(self, predictions: np.ndarray, mode: str) -> np.ndarray:
        cols = self._columns(mode)
        mean, std = np.asarray(self.mean)[cols], np.asarray(self.std)[cols]
        return np.asarray(predictions, dtype=np.float64) * std + mean

    def normalize_structure(self, width_height: np.ndarray) -> np.ndarray:
        """(N, 2) width/height in micrometres to the normalized structure vector."""
        width_height = np.asarray(width_height, dtype=np.float64)
        if width_height.ndim != 2 or width_height.shape[1] != 2:
            raise ValueError(f"structure input must be (N, 2) width/height, got {width_height.shape}")
        if not np.isfinite(width_height).all():
            raise ValueError("structure input must be finite")
        return (width_height - np.asarray(self.mean[:2])) / np.asarray(self.std[:2])

    def to_dict(self) -> Dict[str, List[float]]:
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, values: Dict[str, List[float]]) -> Normalizer:
        return cls(mean=[float(v) for v in values["mean"]], std=[float(v) for v in values["std"]])
