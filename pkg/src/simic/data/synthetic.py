#!/usr/bin/env python
"""
Synthetic field-emitter tip micrographs with exact geometric labels.

A tip is a bright silhouette on a dark background: a trapezoidal shank whose
base spans the bottom edge of the frame, capped by a circular apex arc that is
tangent to both flanks. The silhouette is the convex hull of the apex disk and
the two base corners. Labels are the generating parameters in micrometres.
"""
from __future__ import annotations

# std-lib imports
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

# 3 party imports
import numpy as np
from scipy import ndimage

# project imports
from simic.data.dataset import SEM_ACQUISITION_METADATA, Manifest
from simic.data.image_io import write_image

logger = logging.getLogger(__name__)

Range = Tuple[float, float]


@dataclass
class SynthSpec:
    """
    Parameters of the synthetic tip generator.

    Geometric ranges are in micrometres and are sampled uniformly; `scale_nm`
    converts them to pixels. Blur and noise sigmas are in pixels and grey
    levels respectively.
    """

    size: int = 64
    scale_nm: float = 10.0
    width_um: Range = (0.20, 0.40)
    height_um: Range = (0.25, 0.45)
    radius_um: Range = (0.03, 0.08)
    blur_sigma: Range = (0.0, 1.0)
    noise_sigma: Range = (0.0, 8.0)
    center_jitter_px: float = 4.0
    background: int = 40
    foreground: int = 200
    seed: int = 0
    max_retries: int = 100

    def __post_init__(self):
        if self.size < 8:
            raise ValueError(f"size must be at least 8 pixels, got {self.size}")
        if self.scale_nm <= 0:
            raise ValueError(f"scale_nm must be positive, got {self.scale_nm}")
        for name in ("width_um", "height_um", "radius_um", "blur_sigma", "noise_sigma"):
            low, high = getattr(self, name)
            if low > high:
                raise ValueError(f"{name} range is empty: ({low}, {high})")
            if low < 0:
                raise ValueError(f"{name} range must be non-negative, got ({low}, {high})")
        for name in ("width_um", "height_um", "radius_um"):
            if getattr(self, name)[0] <= 0:
                raise ValueError(f"{name} lower bound must be positive")
        if self.radius_um[1] >= self.width_um[0]:
            raise ValueError(
                f"radius_um upper bound {self.radius_um[1]} must be below width_um lower bound {self.width_um[0]}"
            )
        if self.center_jitter_px < 0:
            raise ValueError(f"center_jitter_px must be non-negative, got {self.center_jitter_px}")
        if not 0 <= self.background < self.foreground <= 255:
            raise ValueError("grey levels must satisfy 0 <= background < foreground <= 255")
        if self.max_retries < 1:
            raise ValueError(f"max_retries must be at least 1, got {self.max_retries}")

    def um_to_px(self, value_um: float) -> float:
        return value_um * 1000.0 / self.scale_nm


@dataclass
class Sample:
    id: str
    image: np.ndarray
    width_um: float
    height_um: float
    radius_um: float
    meta: Dict[str, float] = field(default_factory=dict)


def _tangent_point(center: np.ndarray, radius: float, corner: np.ndarray) -> np.ndarray:
    offset = corner - center
    distance = float(np.hypot(*offset))
    if distance <= radius:
        raise ValueError("base corner lies inside the apex disk")
    unit = offset / distance
    theta = math.acos(radius / distance)
    candidates = []
    for sign in (1.0, -1.0):
        c, s = math.cos(sign * theta), math.sin(sign * theta)
        rotated = np.array([c * unit[0] - s * unit[1], s * unit[0] + c * unit[1]])
        candidates.append(center + radius * rotated)
    # the outer tangent is the upper one in y-down coordinates
    return min(candidates, key=lambda p: p[1])


def tip_outline(
    size: int, width_px: float, height_px: float, radius_px: float, center_x: Optional[float] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Apex disk centre and the shank quadrilateral (TL, TR, BR, BL) in (x, y) pixel units.

    The base lies on y = size, the apex top on y = size - height_px.
    """
    cx = size / 2.0 if center_x is None else center_x
    center = np.array([cx, size - height_px + radius_px])
    left = np.array([cx - width_px / 2.0, float(size)])
    right = np.array([cx + width_px / 2.0, float(size)])
    quad = np.stack([
        _tangent_point(center, radius_px, left),
        _tangent_point(center, radius_px, right),
        right,
        left,
    ])
    return center, quad


def render_tip(
    size: int, width_px: float, height_px: float, radius_px: float, center_x: Optional[float] = None
) -> np.ndarray:
    """
    Rasterizes the tip silhouette at pixel centres.

    Args:
        size (int):
            Side length of the square frame in pixels.
        width_px (float):
            Base width.
        height_px (float):
            Distance from the base (bottom edge) to the apex top.
        radius_px (float):
            Apex radius.
        center_x (float, optional):
            Horizontal axis of the tip. Defaults to `None`, meaning the frame centre.

    Returns:
        np.ndarray: (size, size) boolean mask, True inside the silhouette.

    Raises:
        ValueError: If the apex is not narrower than the base or the apex disk
            does not sit above the base.
    """
    if not 0 < 2 * radius_px < width_px:
        raise ValueError(f"apex diameter {2 * radius_px} must be positive and below the base width {width_px}")
    if height_px <= 2 * radius_px:
        raise ValueError(f"height {height_px} must exceed the apex diameter {2 * radius_px}")
    center, quad = tip_outline(size, width_px, height_px, radius_px, center_x)

    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    disk = (xs - center[0]) ** 2 + (ys - center[1]) ** 2 <= radius_px ** 2

    # clockwise polygon in y-down coordinates: inside is where every edge cross product is >= 0
    inside = np.ones((size, size), dtype=bool)
    for (x0, y0), (x1, y1) in zip(quad, np.roll(quad, -1, axis=0)):
        cross = (x1 - x0) * (ys - y0) - (y1 - y0) * (xs - x0)
        inside &= cross >= 0
    return disk | inside


def _fits_frame(spec: SynthSpec, width_px: float, height_px: float, radius_px: float, cx: float) -> bool:
    if height_px <= 2 * radius_px or 2 * radius_px >= width_px:
        return False
    if spec.size - height_px < 2:
        return False
    return cx - width_px / 2.0 >= 1.0 and cx + width_px / 2.0 <= spec.size - 1.0


def _draw_tip(spec: SynthSpec, rng: np.random.Generator) -> Optional[Dict[str, float]]:
    width_um = round(float(rng.uniform(*spec.width_um)), 4)
    height_um = round(float(rng.uniform(*spec.height_um)), 4)
    radius_um = round(float(rng.uniform(*spec.radius_um)), 4)
    cx = spec.size / 2.0 + float(rng.uniform(-spec.center_jitter_px, spec.center_jitter_px))
    blur = float(rng.uniform(*spec.blur_sigma))
    noise = float(rng.uniform(*spec.noise_sigma))
    params = dict(
        width_um=width_um, height_um=height_um, radius_um=radius_um,
        width_px=spec.um_to_px(width_um), height_px=spec.um_to_px(height_um),
        radius_px=spec.um_to_px(radius_um), center_x=cx, blur_sigma=blur, noise_sigma=noise,
    )
    if not _fits_frame(spec, params["width_px"], params["height_px"], params["radius_px"], cx):
        return None
    return params


def render_sample(spec: SynthSpec, params: Dict[str, float], rng: np.random.Generator) -> np.ndarray:
    """Draws the silhouette, blurs it and adds noise; returns a uint8 image."""
    mask = render_tip(spec.size, params["width_px"], params["height_px"], params["radius_px"], params["center_x"])
    image = spec.background + (spec.foreground - spec.background) * mask.astype(np.float64)
    if params["blur_sigma"] > 0:
        image = ndimage.gaussian_filter(image, sigma=params["blur_sigma"], mode="nearest")
    if params["noise_sigma"] > 0:
        image = image + rng.normal(0.0, params["noise_sigma"], size=image.shape)
    return np.floor(np.clip(image, 0, 255) + 0.5).astype(np.uint8)


def generate_synthetic(
    spec: SynthSpec, n: int, out_dir: Optional[Union[str, Path]] = None
) -> Tuple[List[Sample], Manifest]:
    """
    Generates `n` labelled tip images.

    Draws that do not fit the frame are rejected and redrawn. With `out_dir`
    the images are written to `out_dir/images/tip_XXXX.pgm` and the manifest
    to `out_dir/manifest.csv`.

    Args:
        spec (SynthSpec):
            Generator parameters, including the seed.
        n (int):
            Number of samples, at least 1.
        out_dir (str | Path, optional):
            Dataset directory. Defaults to `None`, meaning nothing is written.

    Returns:
        Tuple[List[Sample], Manifest]: The samples and a manifest with an empty split column.

    Raises:
        ValueError: If `n < 1`.
        RuntimeError: If a sample cannot be placed within `max_retries` draws.
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    rng = np.random.default_rng(spec.seed)
    samples: List[Sample] = []
    records = []
    for index in range(n):
        params = None
        for _ in range(spec.max_retries):
            params = _draw_tip(spec, rng)
            if params is not None:
                break
        if params is None:
            raise RuntimeError(
                f"could not place sample {index} in a {spec.size}px frame after {spec.max_retries} draws; "
                f"shrink the parameter ranges or enlarge the image"
            )
        image = render_sample(spec, params, rng)
        sample_id = f"tip_{index:04d}"
        samples.append(Sample(
            id=sample_id,
            image=image,
            width_um=params["width_um"],
            height_um=params["height_um"],
            radius_um=params["radius_um"],
            meta=params,
        ))
        records.append({
            "id": sample_id,
            "file": f"images/{sample_id}.pgm",
            "width_um": params["width_um"],
            "height_um": params["height_um"],
            "radius_um": params["radius_um"],
            "split": "",
        })

    metadata = {
        "source": "synthetic",
        "scale_nm_per_px": f"{spec.scale_nm:g}",
        "image_size": str(spec.size),
        "seed": str(spec.seed),
        **SEM_ACQUISITION_METADATA,
    }
    manifest = Manifest.from_records(records, metadata=metadata, root=out_dir)
    if out_dir is not None:
        out_dir = Path(out_dir)
        for sample, record in zip(samples, records):
            write_image(out_dir / record["file"], sample.image)
        manifest.save(out_dir / "manifest.csv")
        logger.info("wrote %d synthetic samples to %s", n, out_dir)
    return samples, manifest
