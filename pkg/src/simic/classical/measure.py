#!/usr/bin/env python
"""
Classical tip measurement: threshold segmentation, contour tracing and an
algebraic circle fit to the apex.

Coordinates follow the image grid: pixel (row, col) covers x in [col, col+1]
and y in [row, row+1], y grows downwards, and the tip points up.
"""
from __future__ import annotations

# std-lib imports
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

# 3 party imports
import cv2
import numpy as np
import pandas as pd
from scipy import ndimage, optimize

# project imports
from simic.data.dataset import Manifest
from simic.data.image_io import read_image

logger = logging.getLogger(__name__)

GUESS_WINDOW_ROWS = 4
MIN_APEX_POINTS = 5

# flank line x = a + b * y as (a, b)
Line = Tuple[float, float]


class MeasurementError(ValueError):
    """The image does not contain a measurable tip."""


@dataclass
class TipMeasurement:
    width_px: float
    height_px: float
    radius_px: float
    apex_center: Tuple[float, float]
    taper_deg: float = math.nan
    mask: Optional[np.ndarray] = field(default=None, repr=False)
    contour: Optional[np.ndarray] = field(default=None, repr=False)

    def to_um(self, scale_nm: float) -> Tuple[float, float, float]:
        """(width, height, radius) in micrometres for a scale in nanometres per pixel."""
        factor = scale_nm / 1000.0
        return self.width_px * factor, self.height_px * factor, self.radius_px * factor


def otsu_threshold(image: np.ndarray) -> int:
    """
    Otsu threshold from OpenCV, as the lowest grey level counted as foreground.

    OpenCV keeps pixels strictly above its threshold, so the returned level t
    splits the image into {p < t} and {p >= t}. Ties resolve to the smallest t.

    Raises:
        MeasurementError: If the image has a single grey level.
    """
    image = np.ascontiguousarray(np.clip(image, 0, 255), dtype=np.uint8)
    if image.min() == image.max():
        raise MeasurementError("image has no foreground/background separation (single grey level)")
    level, _ = cv2.threshold(image, 0, 255, cv2.THRESH_BINARY + cv2.THRESH_OTSU)
    return int(level) + 1


def segment(image: np.ndarray, threshold: Union[str, int] = "auto", smooth_sigma: float = 0.0) -> np.ndarray:
    """
    Foreground mask of pixels >= threshold.

    An optional Gaussian pre-smoothing is applied first. A 3x3 opening removes
    speckle and morphological reconstruction restores the exact outline of
    every component that survives it.

    Args:
        image (np.ndarray):
            (H, W) greyscale image.
        threshold (str | int, optional):
            "auto" for the between-class-variance threshold or a fixed grey
            level. Defaults to "auto".
        smooth_sigma (float, optional):
            Gaussian sigma in pixels. Defaults to 0.0, meaning no smoothing.

    Raises:
        MeasurementError: If the image is uniform or the foreground is empty.
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D greyscale image, got shape {image.shape}")
    if smooth_sigma > 0:
        image = np.floor(ndimage.gaussian_filter(image.astype(np.float64), smooth_sigma) + 0.5)
    level = otsu_threshold(image) if threshold == "auto" else int(threshold)
    raw = image >= level
    opened = ndimage.binary_opening(raw, structure=np.ones((3, 3), dtype=bool))
    mask = ndimage.binary_propagation(opened, mask=raw)
    if not mask.any():
        raise MeasurementError(f"no foreground left after thresholding at {level} and opening")
    return mask


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Largest 8-connected component with its holes filled."""
    labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    if count == 0:
        raise MeasurementError("mask is empty")
    sizes = np.bincount(labels.reshape(-1))[1:]
    component = labels == (int(np.argmax(sizes)) + 1)
    return ndimage.binary_fill_holes(component)


def trace_contour(mask: np.ndarray) -> np.ndarray:
    """
    Outer boundary of the largest component, one pixel per step.

    OpenCV traces the border without approximation. The result starts at the
    first foreground pixel in raster order and runs clockwise on screen, so
    the shoelace area in (x=col, y=row) is positive.

    Returns:
        np.ndarray: (K, 2) integer (row, col) boundary pixels, not repeating the start.

    Raises:
        MeasurementError: If the mask is empty.
    """
    component = largest_component(np.asarray(mask, dtype=bool))
    padded = np.pad(component, 1).astype(np.uint8)
    contours, _ = cv2.findContours(padded, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE)
    if not contours:
        raise MeasurementError("no contour found")
    points = max(contours, key=len).reshape(-1, 2)
    contour = points[:, ::-1].astype(int) - 1
    if signed_area(contour) < 0:
        contour = np.concatenate([contour[:1], contour[:0:-1]])
    return contour


def signed_area(contour: np.ndarray) -> float:
    """Shoelace area of a closed (row, col) polygon in (x=col, y=row) coordinates."""
    x, y = contour[:, 1].astype(np.float64), contour[:, 0].astype(np.float64)
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def crack_edge_points(mask: np.ndarray, contour: np.ndarray) -> np.ndarray:
    """
    Midpoints of the pixel edges between contour pixels and background, as (x, y).

    These lie on the sub-pixel outline of the rasterized shape rather than on
    pixel centres.
    """
    padded = np.pad(np.asarray(mask, dtype=bool), 1)
    points = []
    for row, col in {(int(r), int(c)) for r, c in contour}:
        pr, pc = row + 1, col + 1
        if not padded[pr - 1, pc]:
            points.append((col + 0.5, float(row)))
        if not padded[pr + 1, pc]:
            points.append((col + 0.5, row + 1.0))
        if not padded[pr, pc - 1]:
            points.append((float(col), row + 0.5))
        if not padded[pr, pc + 1]:
            points.append((col + 1.0, row + 0.5))
    points.sort(key=lambda p: (p[1], p[0]))
    return np.array(points, dtype=np.float64).reshape(-1, 2)


def fit_circle(points: np.ndarray) -> Tuple[float, float, float]:
    """
    Algebraic (Kasa) least-squares circle through (x, y) points.

    Solves x^2 + y^2 = a x + b y + c on mean-centred coordinates.

    Returns:
        Tuple[float, float, float]: centre x, centre y and radius.

    Raises:
        MeasurementError: With fewer than 5 points or a degenerate fit.
    """
    points = np.asarray(points, dtype=np.float64)
    if len(points) < MIN_APEX_POINTS:
        raise MeasurementError(f"circle fit needs at least {MIN_APEX_POINTS} points, got {len(points)}")
    origin = points.mean(axis=0)
    x, y = (points - origin).T
    design = np.column_stack([x, y, np.ones_like(x)])
    solution, _, rank, _ = np.linalg.lstsq(design, x * x + y * y, rcond=None)
    if rank < 3:
        raise MeasurementError("circle fit is degenerate (collinear points)")
    a, b, c = solution
    cx, cy = a / 2.0, b / 2.0
    r_squared = c + cx * cx + cy * cy
    if r_squared <= 0:
        raise MeasurementError("circle fit is degenerate (non-positive radius)")
    return float(cx + origin[0]), float(cy + origin[1]), math.sqrt(r_squared)


def flank_lines(component: np.ndarray, first_row: int, last_row: int) -> Optional[Tuple[Line, Line]]:
    """
    Least-squares flank lines x = a + b * y over a band of rows.

    Each row contributes the outer pixel edges of its foreground run, taken at
    the row's centre height. Returns `None` with fewer than 3 usable rows.
    """
    rows = np.arange(max(first_row, 0), min(last_row, component.shape[0] - 1) + 1)
    rows = rows[[component[r].any() for r in rows]]
    if len(rows) < 3:
        return None
    left = np.array([np.flatnonzero(component[r])[0] for r in rows], dtype=np.float64)
    right = np.array([np.flatnonzero(component[r])[-1] + 1 for r in rows], dtype=np.float64)
    y = rows + 0.5
    b_left, a_left = np.polyfit(y, left, 1)
    b_right, a_right = np.polyfit(y, right, 1)
    return (float(a_left), float(b_left)), (float(a_right), float(b_right))


def _wedge_circle(left: Line, right: Line, cy: float) -> Tuple[float, float]:
    # centre x and radius of the circle at height cy touching both flank lines
    (a_left, b_left), (a_right, b_right) = left, right
    n_left, n_right = math.hypot(1.0, b_left), math.hypot(1.0, b_right)
    cx = (n_left * (a_right + b_right * cy) + n_right * (a_left + b_left * cy)) / (n_left + n_right)
    return cx, (cx - a_left - b_left * cy) / n_left


def _arc_points(points: np.ndarray, left: Line, right: Line, cx: float, cy: float) -> np.ndarray:
    # points above both tangent points, i.e. on the arc rather than the flanks
    dx, dy = points[:, 0] - cx, points[:, 1] - cy
    on_arc = (dx * left[1] + dy <= 0) & (dx * right[1] + dy <= 0)
    return points[on_arc]


def fit_tangent_circle(
    points: np.ndarray, left: Line, right: Line, cy: float, span: float, iterations: int = 3
) -> Tuple[float, float, float]:
    """
    Circle inscribed between two flank lines, fitted to the apex arc.

    Tangency to both flanks leaves the centre height as the only free
    parameter. It is found by a bounded scalar search minimizing the squared
    radial residuals of the arc points, which are re-selected between tangent
    points after every pass.

    Args:
        points (np.ndarray):
            (N, 2) outline points as (x, y).
        left, right (Tuple[float, float]):
            Flank lines (a, b) with x = a + b * y, from `flank_lines`.
        cy (float):
            Starting centre height; the search is centred on it.
        span (float):
            Half-width of the search interval.
        iterations (int, optional):
            Selection and fit passes. Defaults to 3.

    Returns:
        Tuple[float, float, float]: centre x, centre y and radius.

    Raises:
        MeasurementError: If fewer than 5 points lie on the arc.
    """
    ox, oy = _wedge_circle(left, right, cy)[0], cy
    points = np.asarray(points, dtype=np.float64) - (ox, oy)
    left = (left[0] + left[1] * oy - ox, left[1])
    right = (right[0] + right[1] * oy - ox, right[1])
    cx, cy = 0.0, 0.0
    radius = _wedge_circle(left, right, cy)[1]
    for _ in range(iterations):
        arc = _arc_points(points, left, right, cx, cy)
        if len(arc) < MIN_APEX_POINTS:
            raise MeasurementError(f"only {len(arc)} points on the apex arc")

        def cost(height: float) -> float:
            x, r = _wedge_circle(left, right, height)
            return float(np.sum((np.hypot(arc[:, 0] - x, arc[:, 1] - height) - r) ** 2))

        result = optimize.minimize_scalar(cost, bounds=(-span, span), method="bounded", options={"xatol": 1e-6})
        converged = abs(result.x - cy) < 1e-4
        cy = float(result.x)
        cx, radius = _wedge_circle(left, right, cy)
        if converged:
            break
    if not radius > 0:
        raise MeasurementError(f"tangent circle is degenerate (radius {radius:.3f}px)")
    return cx + ox, cy + oy, radius


def measure_tip(mask: np.ndarray, contour: Optional[np.ndarray] = None) -> TipMeasurement:
    """
    Width, height and apex radius of an apex-up tip.

    Height is the vertical extent of the foreground, width the horizontal
    extent of its lowest row. The radius comes from a Kasa fit: a first fit
    over the top rows gives R_guess, a second over the top 2 * R_guess rows,
    and a trimmed refit keeps only points on the upper half of that circle
    that lie within a pixel of it. When straight flanks show below the apex,
    the circle is refitted tangent to both of them on the arc points alone.

    Args:
        mask (np.ndarray):
            Boolean foreground mask.
        contour (np.ndarray, optional):
            (K, 2) boundary from `trace_contour`. Defaults to `None`, meaning
            it is traced here.

    Raises:
        MeasurementError: With fewer than 5 apex points, or when the top is
            flat (the fitted radius reaches half the base width, or the top
            row is wider than an arc of that radius allows).
    """
    component = largest_component(np.asarray(mask, dtype=bool))
    if contour is None:
        contour = trace_contour(component)
    rows = np.flatnonzero(component.any(axis=1))
    top, bottom = int(rows[0]), int(rows[-1])
    height = float(bottom - top + 1)
    base = np.flatnonzero(component[bottom])
    width = float(base[-1] - base[0] + 1)

    points = crack_edge_points(component, contour)
    guess_window = points[points[:, 1] <= top + GUESS_WINDOW_ROWS]
    if len(guess_window) < MIN_APEX_POINTS:
        raise MeasurementError(f"only {len(guess_window)} apex points near the top row")
    _, _, r_guess = fit_circle(guess_window)
    r_guess = min(r_guess, height)

    apex = points[points[:, 1] <= top + 2.0 * r_guess]
    cx, cy, radius = fit_circle(apex)
    for _ in range(2):
        distance = np.hypot(apex[:, 0] - cx, apex[:, 1] - cy)
        keep = (apex[:, 1] <= cy) & (np.abs(distance - radius) <= 1.0)
        if keep.sum() < MIN_APEX_POINTS:
            break
        cx, cy, radius = fit_circle(apex[keep])

    top_run = np.flatnonzero(component[top])
    top_width = float(top_run[-1] - top_run[0] + 1)
    if radius >= width / 2.0 or top_width > 2.0 * math.sqrt(3.0 * radius) + 2.0:
        raise MeasurementError(
            f"flat top: fitted radius {radius:.2f}px with a {top_width:.0f}px top row on a {width:.0f}px base"
        )

    taper = math.nan
    flanks = flank_lines(component, int(math.ceil(cy + radius)) + 1, bottom - 1)
    if flanks is not None:
        left, right = flanks
        taper = math.degrees(math.atan(right[1]) - math.atan(left[1]))
        if right[1] >= left[1]:
            try:
                tangent = fit_tangent_circle(points, left, right, cy, span=max(radius, 2.0))
            except MeasurementError as e:
                logger.debug("keeping the free circle fit: %s", e)
            else:
                if tangent[2] < width / 2.0:
                    cx, cy, radius = tangent
    return TipMeasurement(
        width_px=width,
        height_px=height,
        radius_px=radius,
        apex_center=(cx, cy),
        taper_deg=taper,
        mask=component,
        contour=contour,
    )


def measure_image(image: np.ndarray, threshold: Union[str, int] = "auto", smooth_sigma: float = 0.0) -> TipMeasurement:
    """Segments, traces and measures one image."""
    mask = segment(image, threshold=threshold, smooth_sigma=smooth_sigma)
    return measure_tip(mask, trace_contour(mask))


REPORT_COLUMNS = ["id", "width_px", "height_px", "radius_px", "width_um", "height_um", "radius_um"]


def baseline_report(
    manifest: Manifest,
    scale_nm: Optional[float] = None,
    threshold: Union[str, int] = "auto",
    smooth_sigma: float = 0.0,
) -> pd.DataFrame:
    """
    Measures every image of a manifest.

    Images that cannot be measured get NaN values and a warning. Micrometre
    columns need a scale: `scale_nm`, else the manifest's `scale_nm_per_px`
    metadata; without either they are NaN.
    """
    scale_nm = scale_nm if scale_nm is not None else manifest.scale_nm_per_px
    if scale_nm is None:
        logger.warning("no pixel scale known; micrometre columns will be empty")
    rows: List[dict] = []
    for record in manifest.to_dict("records"):
        row = dict.fromkeys(REPORT_COLUMNS, math.nan)
        row["id"] = record["id"]
        try:
            result = measure_image(read_image(manifest.path_of(record["file"])), threshold, smooth_sigma)
        except MeasurementError as e:
            logger.warning("%s: %s", record["id"], e)
            rows.append(row)
            continue
        row.update(width_px=result.width_px, height_px=result.height_px, radius_px=result.radius_px)
        if scale_nm is not None:
            row["width_um"], row["height_um"], row["radius_um"] = result.to_um(scale_nm)
        rows.append(row)
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)
