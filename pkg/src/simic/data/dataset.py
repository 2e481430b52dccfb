#!/usr/bin/env python
from __future__ import annotations

# std-lib imports
import io
import logging
import math
from functools import wraps
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

# 3 party imports
import numpy as np
import pandas as pd

# project imports
from simic.data.image_io import ImageFormatError, read_image

logger = logging.getLogger(__name__)

MANIFEST_COLUMNS = ["id", "file", "width_um", "height_um", "radius_um", "split"]
LABEL_COLUMNS = ["width_um", "height_um", "radius_um"]
SPLITS = ("train", "val", "eval")

# acquisition parameters of the SEM campaign the real data came from
SEM_ACQUISITION_METADATA = {
    "beam_current_pA": "300",
    "acceleration_voltage_kV": "5",
    "working_distance_mm": "10",
    "tilt_deg": "45",
    "field_of_view_um": "1",
    "resolution": "1024x768",
}


class ManifestError(ValueError):
    """Invalid manifest content; `row` is the 1-based data row when known."""

    def __init__(self, message: str, row: Optional[int] = None):
        super().__init__(f"row {row}: {message}" if row is not None else message)
        self.row = row


def split(ids: Sequence[str], seed: int) -> Dict[str, str]:
    """
    Assigns every id to train, val or eval.

    A seeded permutation is cut twice at 80:20. First the eval partition is cut
    off, then val is cut from the remainder. The smaller side of each cut gets
    the floor, never below one id, and train takes the rest. So 900 ids give
    576/144/180, 10 ids give 7/1/2 and 7 ids give 5/1/1.

    Args:
        ids (Sequence[str]):
            Sample ids, at least 5.
        seed (int):
            Seed of the permutation.

    Returns:
        Dict[str, str]:
            Mapping id -> one of "train", "val", "eval".

    Raises:
        ValueError: If fewer than 5 ids are given or ids repeat.
    """
    ids = list(ids)
    if len(ids) < 5:
        raise ValueError(f"split needs at least 5 ids, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise ValueError("split: ids must be unique")
    n = len(ids)
    n_eval = max(n // 5, 1)
    n_val = max((n - n_eval) // 5, 1)
    n_train = n - n_eval - n_val
    order = np.random.default_rng(seed).permutation(n)
    assignment = {}
    for rank, index in enumerate(order):
        if rank < n_train:
            assignment[ids[index]] = "train"
        elif rank < n_train + n_val:
            assignment[ids[index]] = "val"
        else:
            assignment[ids[index]] = "eval"
    return assignment


class Manifest(pd.DataFrame):
    """
    Binds image files to (width, height, radius) labels in micrometres and a split.

    `metadata` holds the `#key=value` header lines, and `root` is the directory
    that relative `file` paths resolve against.
    """

    _metadata = ["metadata", "root"]

    def return_if_empty(return_value: Optional[Any] = "self"):
        def decorator(method: Callable[..., Any]) -> Callable[..., Any]:
            @wraps(method)
            def wrapper(self: Manifest, *args, **kwargs) -> Any:
                if self.empty:
                    return self if return_value == "self" else return_value
                return method(self, *args, **kwargs)
            return wrapper
        return decorator

    def __init__(self, data=None, *args, metadata: Optional[Dict[str, str]] = None,
                 root: Optional[Union[str, Path]] = None, **kwargs):
        super().__init__(data, *args, **kwargs)
        if metadata is not None or not hasattr(self, "metadata"):
            self.metadata = dict(metadata or {})
        if root is not None or not hasattr(self, "root"):
            self.root = Path(root) if root is not None else Path(".")

    @property
    def _constructor(self):
        return Manifest

    @classmethod
    def from_records(cls, records: List[Dict[str, Any]], metadata: Optional[Dict[str, str]] = None,
                     root: Optional[Union[str, Path]] = None) -> Manifest:
        frame = pd.DataFrame(records, columns=MANIFEST_COLUMNS)
        frame["split"] = frame["split"].fillna("")
        return cls(frame, metadata=metadata, root=root)

    def _with_attrs(self, frame: pd.DataFrame) -> Manifest:
        return Manifest(frame, metadata=dict(self.metadata), root=self.root)

    @return_if_empty("self")
    def get_split(self, name: str) -> Manifest:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}, expected one of {SPLITS}")
        return self._with_attrs(self[self["split"] == name].reset_index(drop=True))

    @return_if_empty(return_value={})
    def split_counts(self) -> Dict[str, int]:
        return {name: int((self["split"] == name).sum()) for name in SPLITS}

    def assign_splits(self, seed: int) -> Manifest:
        assignment = split(self["id"].tolist(), seed)
        frame = self.copy()
        frame["split"] = frame["id"].map(assignment)
        return self._with_attrs(frame)

    def path_of(self, file: str) -> Path:
        path = Path(file)
        return path if path.is_absolute() else self.root / path

    def labels(self) -> np.ndarray:
        """(N, 3) float array of width, height, radius in micrometres."""
        return self[LABEL_COLUMNS].to_numpy(dtype=np.float64)

    def load_images(self) -> np.ndarray:
        """Decodes every image into one (N, H, W) uint8 stack; sizes must agree."""
        images = [read_image(self.path_of(f)) for f in self["file"]]
        shapes = {img.shape for img in images}
        if len(shapes) > 1:
            raise ManifestError(f"images have differing sizes: {sorted(shapes)}")
        return np.stack(images) if images else np.zeros((0, 0, 0), dtype=np.uint8)

    @property
    def scale_nm_per_px(self) -> Optional[float]:
        value = self.metadata.get("scale_nm_per_px")
        return float(value) if value not in (None, "") else None

    def verify_files(self) -> None:
        """
        Checks that every referenced file exists and decodes.

        Raises:
            ManifestError: Naming the first row whose file is missing or malformed.
        """
        for row, file in enumerate(self["file"], start=1):
            path = self.path_of(file)
            if not path.is_file():
                raise ManifestError(f"image file {str(path)!r} does not exist", row)
            try:
                read_image(path)
            except ImageFormatError as e:
                raise ManifestError(f"image file {str(path)!r} does not decode: {e}", row) from e

    def to_csv_text(self) -> str:
        buffer = io.StringIO()
        for key, value in self.metadata.items():
            buffer.write(f"#{key}={value}\n")
        frame = pd.DataFrame(self[MANIFEST_COLUMNS])
        frame.to_csv(buffer, index=False, lineterminator="\n")
        return buffer.getvalue()

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv_text(), encoding="utf-8")
        return path


def _validate_rows(frame: pd.DataFrame) -> None:
    seen = {}
    for row, record in enumerate(frame.itertuples(index=False), start=1):
        sample_id = record.id
        if not isinstance(sample_id, str) or not sample_id:
            raise ManifestError("empty id", row)
        if sample_id in seen:
            raise ManifestError(f"duplicate id {sample_id!r} (first seen in row {seen[sample_id]})", row)
        seen[sample_id] = row
        values = {}
        for column in LABEL_COLUMNS:
            value = getattr(record, column)
            if not isinstance(value, float) or not math.isfinite(value) or value <= 0:
                raise ManifestError(f"{column} must be a positive finite number, got {value!r}", row)
            values[column] = value
        if values["radius_um"] >= values["width_um"]:
            raise ManifestError(
                f"radius_um {values['radius_um']} must be smaller than width_um {values['width_um']}", row
            )
        if record.split not in ("",) + SPLITS:
            raise ManifestError(f"unknown split {record.split!r}", row)


def load_manifest(path: Union[str, Path], check_files: bool = False) -> Manifest:
    """
    Reads and validates a manifest CSV.

    Leading `#key=value` lines become metadata. The body must have the
    columns `id,file,width_um,height_um,radius_um,split`; `split` may be empty
    before the split step.

    Args:
        path (str | Path):
            Manifest file.
        check_files (bool, optional):
            If True, also verifies that every image exists and decodes.
            Defaults to False.

    Raises:
        ManifestError: On missing columns, duplicate ids, non-positive labels,
            a radius not smaller than the width, or unknown split names.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest {str(path)!r} does not exist")
    lines = path.read_text(encoding="utf-8").splitlines(keepends=True)
    metadata: Dict[str, str] = {}
    body_start = 0
    for line in lines:
        if not line.startswith("#"):
            break
        key, sep, value = line[1:].strip().partition("=")
        if not sep:
            raise ManifestError(f"metadata line {line.strip()!r} is not #key=value")
        metadata[key.strip()] = value.strip()
        body_start += 1

    body = "".join(lines[body_start:])
    if not body.strip():
        raise ManifestError("manifest has no header row")
    frame = pd.read_csv(io.StringIO(body), dtype={"id": str, "file": str, "split": str}, keep_default_na=False)
    missing = [c for c in MANIFEST_COLUMNS if c not in frame.columns]
    if missing:
        raise ManifestError(f"missing column(s): {', '.join(missing)}")
    for column in LABEL_COLUMNS:
        parsed = pd.to_numeric(frame[column], errors="coerce")
        bad = parsed.isna() & (frame[column].astype(str) != "")
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0]) + 1
            raise ManifestError(f"{column} is not a decimal number: {frame[column].iloc[row - 1]!r}", row)
        frame[column] = parsed.astype(np.float64)
    _validate_rows(frame[MANIFEST_COLUMNS])

    manifest = Manifest(frame[MANIFEST_COLUMNS].reset_index(drop=True), metadata=metadata, root=path.parent)
    if check_files:
        manifest.verify_files()
    logger.debug("loaded manifest %s with %d rows", path, len(manifest))
    return manifest
