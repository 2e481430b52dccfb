#!/usr/bin/env python
# std-lib imports
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

# 3 party imports
import numpy as np
import pandas as pd

# project imports
from simic.data.dataset import Manifest, ManifestError
from simic.data.image_io import read_image, write_image

logger = logging.getLogger(__name__)


@dataclass
class AugmentationSpec:
    """Contrast factors `alphas` and brightness offsets `betas`; variants are their cartesian product."""

    alphas: List[float] = field(default_factory=lambda: [0.6, 1.1, 1.6])
    betas: List[float] = field(default_factory=lambda: [-40.0, 10.0, 60.0])
    clamp: Tuple[float, float] = (0.0, 255.0)

    def __post_init__(self):
        if not self.alphas or not self.betas:
            raise ValueError("augmentation needs at least one alpha and one beta")
        if any(a <= 0 for a in self.alphas):
            raise ValueError(f"alphas must be strictly positive, got {self.alphas}")
        if not 0 <= self.clamp[0] < self.clamp[1] <= 255:
            raise ValueError(f"clamp range {self.clamp} must lie inside [0, 255]")

    def pairs(self) -> List[Tuple[int, int, float, float]]:
        """(i, j, alpha_i, beta_j) in row-major order: alpha outer, beta inner."""
        return [(i, j, a, b) for i, a in enumerate(self.alphas) for j, b in enumerate(self.betas)]

    def __len__(self) -> int:
        return len(self.alphas) * len(self.betas)


def variant_suffix(i: int, j: int) -> str:
    return f"_a{i}b{j}"


def adjust(image: np.ndarray, alpha: float, beta: float, clamp: Tuple[float, float] = (0.0, 255.0)) -> np.ndarray:
    """alpha * p + beta per pixel, clamped, then rounded half up to uint8."""
    values = alpha * image.astype(np.float64) + beta
    return np.floor(np.clip(values, clamp[0], clamp[1]) + 0.5).astype(np.uint8)


def augment(image: np.ndarray, spec: Optional[AugmentationSpec] = None) -> List[np.ndarray]:
    """
    Brightness/contrast variants of an 8-bit greyscale image.

    Args:
        image (np.ndarray):
            (H, W) uint8 image.
        spec (AugmentationSpec, optional):
            Factor lists. Defaults to `None`, meaning alphas {0.6, 1.1, 1.6}
            and betas {-40, 10, 60}.

    Returns:
        List[np.ndarray]: One image per (alpha, beta) pair in `spec.pairs()` order.
    """
    spec = spec or AugmentationSpec()
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError(f"augment expects a 2-D uint8 image, got {image.dtype} {image.shape}")
    return [adjust(image, a, b, spec.clamp) for _, _, a, b in spec.pairs()]


def expand_training_set(
    manifest: Manifest,
    spec: Optional[AugmentationSpec] = None,
    out_dir: Optional[Union[str, Path]] = None,
) -> Manifest:
    """
    Materializes the augmented variants of every train row.

    Each train row is followed by its variants, whose ids carry the
    `_a{i}b{j}` suffix and whose labels equal the parent's. Val and eval rows
    are copied unchanged. Variant images go to `augmented/` under `out_dir`.

    Args:
        manifest (Manifest):
            Manifest whose split column is filled.
        spec (AugmentationSpec, optional):
            Defaults to `None`, meaning the default factor lists.
        out_dir (str | Path, optional):
            Dataset root the variant files are written under. Defaults to
            `None`, meaning the manifest's own root.

    Returns:
        Manifest: The expanded manifest, rooted at `out_dir`.

    Raises:
        ManifestError: If the split column is empty or a variant id collides
            with an existing id.
    """
    spec = spec or AugmentationSpec()
    if (manifest["split"] == "").any():
        raise ManifestError("manifest has rows without a split; run the split step first")
    root = Path(out_dir) if out_dir is not None else manifest.root
    existing = set(manifest["id"])
    rows = []
    written = 0
    for record in manifest.to_dict("records"):
        rows.append(record)
        if record["split"] != "train":
            continue
        source = read_image(manifest.path_of(record["file"]))
        for (i, j, _, _), variant in zip(spec.pairs(), augment(source, spec)):
            variant_id = record["id"] + variant_suffix(i, j)
            if variant_id in existing:
                raise ManifestError(f"variant id {variant_id!r} collides with an existing id")
            existing.add(variant_id)
            file = f"augmented/{variant_id}.pgm"
            write_image(root / file, variant)
            written += 1
            rows.append({**record, "id": variant_id, "file": file})

    # originals keep pointing at their files when the root moves
    if root != manifest.root:
        for row in rows:
            if not row["file"].startswith("augmented/"):
                row["file"] = str(manifest.path_of(row["file"]).resolve())
    logger.info("wrote %d augmented images under %s", written, root / "augmented")
    frame = pd.DataFrame(rows, columns=manifest.columns)
    metadata = {**manifest.metadata, "augmented": f"{len(spec)}x"}
    return Manifest(frame, metadata=metadata, root=root)
