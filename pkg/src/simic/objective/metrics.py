#!/usr/bin/env python
from __future__ import annotations

# std-lib imports
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

# 3 party imports
import numpy as np
import pandas as pd
from sklearn.metrics import mean_squared_error, r2_score

# project imports
from simic.data.dataset import Manifest
from simic.model.normalizer import Normalizer, TARGETS
from simic.model.simic import SimicModel

logger = logging.getLogger(__name__)

TARGET_LABELS = {"width_um": "W", "height_um": "H", "radius_um": "R"}


def _as_vectors(y, y_hat):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch: {y.size} targets vs {y_hat.size} predictions")
    return y, y_hat


def rmse(y, y_hat) -> float:
    """Square root of the mean squared error."""
    y, y_hat = _as_vectors(y, y_hat)
    if y.size < 1:
        raise ValueError("rmse needs at least one sample")
    return float(np.sqrt(mean_squared_error(y, y_hat)))


def r_squared(y, y_hat) -> float:
    """
    1 - SS_res / SS_tot.

    Raises:
        ValueError: With fewer than 2 samples, or when the targets have no
            variance (SS_tot = 0).
    """
    y, y_hat = _as_vectors(y, y_hat)
    if y.size < 2:
        raise ValueError(f"r_squared needs at least 2 samples, got {y.size}")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("r_squared is undefined: targets have zero variance")
    return float(r2_score(y, y_hat))


@dataclass
class MetricsReport:
    """Per-target RMSE and R^2 of one split; half mode only carries the radius."""

    split: str
    mode: str
    n: int
    rmse: Dict[str, float] = field(default_factory=dict)
    r2: Dict[str, float] = field(default_factory=dict)
    name: str = ""

    @property
    def targets(self) -> List[str]:
        return list(self.rmse)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "target": self.targets,
            "rmse": [self.rmse[t] for t in self.targets],
            "r2": [self.r2[t] for t in self.targets],
            "n": self.n,
            "split": self.split,
            "mode": self.mode,
        })

    def to_csv(self, path: Optional[Union[str, Path]] = None) -> str:
        text = self.to_frame().to_csv(index=False, lineterminator="\n", float_format="%.10g")
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def to_table(self) -> str:
        title = f"{self.name + ' ' if self.name else ''}{self.mode} prediction, {self.split} split (N={self.n})"
        return title + "\n" + self.to_frame()[["target", "rmse", "r2"]].to_markdown(index=False, floatfmt=".6g")


def report_from_predictions(
    labels: np.ndarray, predictions: np.ndarray, mode: str, split: str, name: str = ""
) -> MetricsReport:
    """Builds a report from (N, 3) labels and de-normalized (N, 3) or (N, 1) predictions."""
    targets = list(TARGETS) if mode == "full" else ["radius_um"]
    columns = [TARGETS.index(t) for t in targets]
    report = MetricsReport(split=split, mode=mode, n=int(labels.shape[0]), name=name)
    for k, (target, column) in enumerate(zip(targets, columns)):
        report.rmse[target] = rmse(labels[:, column], predictions[:, k])
        report.r2[target] = r_squared(labels[:, column], predictions[:, k])
    return report


def evaluate(
    model: SimicModel,
    normalizer: Normalizer,
    manifest: Manifest,
    split: str = "eval",
    name: str = "",
) -> MetricsReport:
    """
    Scores a model on one split of a manifest.

    Predictions are de-normalized to micrometres before scoring. In half mode
    the true width and height are fed as the structure input and only the
    radius is scored.

    Raises:
        ValueError: If the split is empty.
    """
    subset = manifest.get_split(split)
    if subset.empty:
        raise ValueError(f"split {split!r} is empty")
    labels = subset.labels()
    predictions = model.predict(subset.load_images(), normalizer, width_height_um=labels[:, :2])
    report = report_from_predictions(labels, predictions, model.config.mode, split, name=name or model.config.name)
    logger.info("evaluated %s on %d %s samples", report.name, report.n, split)
    return report


def compare_reports(reports: Sequence[MetricsReport]) -> pd.DataFrame:
    """
    Side-by-side table of several runs: one row per run, RMSE and R^2 columns per target.

    Full-mode runs fill W, H and R columns, half-mode runs only R.
    """
    rows = []
    for report in reports:
        row = {"model": report.name, "mode": report.mode, "n": report.n}
        for target in TARGETS:
            label = TARGET_LABELS[target]
            row[f"rmse_{label}"] = report.rmse.get(target, np.nan)
            row[f"r2_{label}"] = report.r2.get(target, np.nan)
        rows.append(row)
    return pd.DataFrame(rows)
