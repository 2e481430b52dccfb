#!/usr/bin/env python
# std-lib imports
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

# 3 party imports
import numpy as np
import pandas as pd

# project imports
from simic.data.image_io import write_image

logger = logging.getLogger(__name__)


@dataclass
class AttentionMaps:
    """Per-head attention weights over the (Hf, Wf) feature grid of one input."""

    weights: np.ndarray
    heads: int
    sample_id: str = ""

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 3 or self.weights.shape[0] != self.heads:
            raise ValueError(f"expected ({self.heads}, Hf, Wf) weights, got {self.weights.shape}")

    @classmethod
    def from_batch(cls, attention: np.ndarray, sample_ids: List[str]) -> List["AttentionMaps"]:
        """Splits an (N, heads, Hf, Wf) forward-pass output into one object per sample."""
        return [cls(weights=attention[i], heads=attention.shape[1], sample_id=sample_ids[i])
                for i in range(attention.shape[0])]

    @property
    def grid(self) -> Tuple[int, int]:
        return self.weights.shape[1], self.weights.shape[2]

    def to_frame(self) -> pd.DataFrame:
        heads, rows, cols = self.weights.shape
        h, r, c = np.meshgrid(np.arange(heads), np.arange(rows), np.arange(cols), indexing="ij")
        return pd.DataFrame({
            "sample_id": self.sample_id,
            "head": h.reshape(-1),
            "row": r.reshape(-1),
            "col": c.reshape(-1),
            "weight": self.weights.reshape(-1),
        })


def upsample_nearest(grid: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resize of a 2-D grid; output pixel (i, j) takes cell (i*Hf//H, j*Wf//W)."""
    rows = np.arange(size[0]) * grid.shape[0] // size[0]
    cols = np.arange(size[1]) * grid.shape[1] // size[1]
    return grid[np.ix_(rows, cols)]


def rescale_to_uint8(values: np.ndarray) -> np.ndarray:
    """Linear min-max stretch to [0, 255]; a constant map becomes mid-grey 128."""
    low, high = float(values.min()), float(values.max())
    if high <= low:
        return np.full(values.shape, 128, dtype=np.uint8)
    return np.floor((values - low) / (high - low) * 255.0 + 0.5).astype(np.uint8)


def export_attention_map(
    maps: AttentionMaps,
    input_size: Union[int, Tuple[int, int]],
    out_dir: Union[str, Path],
    stem: str = "attention",
) -> List[Path]:
    """
    Writes one greymap per head plus a CSV of the raw weights.

    Each head grid is upsampled to the input size and stretched to [0, 255]
    on its own. Files are `{stem}_head{k}.pgm` and `{stem}_weights.csv`, the
    latter with one row per head and feature position.

    Returns:
        List[Path]: the head images followed by the CSV.
    """
    if isinstance(input_size, int):
        input_size = (input_size, input_size)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for head in range(maps.heads):
        image = rescale_to_uint8(upsample_nearest(maps.weights[head], input_size))
        path = out_dir / f"{stem}_head{head}.pgm"
        write_image(path, image)
        written.append(path)
    csv_path = out_dir / f"{stem}_weights.csv"
    maps.to_frame().to_csv(csv_path, index=False, lineterminator="\n")
    written.append(csv_path)
    logger.info("wrote %d attention maps for %r to %s", maps.heads, maps.sample_id, out_dir)
    return written
