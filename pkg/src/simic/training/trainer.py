#!/usr/bin/env python
from __future__ import annotations

# std-lib imports
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

# 3 party imports
import numpy as np
import pandas as pd
from tqdm import tqdm

# project imports
from simic.core.tensor import Tensor, no_grad
from simic.data.dataset import Manifest
from simic.model.checkpoint import save_checkpoint
from simic.model.normalizer import Normalizer
from simic.model.simic import SimicModel, images_to_tensor
from simic.objective.losses import REDUCTIONS, huber_loss
from simic.training.optim import Adam

logger = logging.getLogger(__name__)

MIN_DELTA = 1e-6


@dataclass
class TrainConfig:
    """Optimization settings; defaults are the published training hyperparameters."""

    lr: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 500
    weight_decay: float = 1e-5
    patience: int = 20
    delta: float = 1.0
    reduction: str = "sum"
    seed: int = 0
    checkpoint_path: Optional[Union[str, Path]] = None
    record_wall_time: bool = False
    progress: bool = True

    def __post_init__(self):
        for name in ("lr", "batch_size", "max_epochs", "patience", "delta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be at least 2 for batch norm, got {self.batch_size}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.patience >= self.max_epochs:
            raise ValueError(f"patience {self.patience} must be smaller than max_epochs {self.max_epochs}")
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"reduction must be one of {REDUCTIONS}, got {self.reduction!r}")


@dataclass
class TrainLog:
    """Per-epoch losses (mean per sample) and the epoch whose weights were kept."""

    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    seconds: List[float] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch] if self.best_epoch >= 0 else math.nan

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "epoch": np.arange(1, self.epochs + 1),
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "seconds": self.seconds,
        })

    def to_csv(self, path: Optional[Union[str, Path]] = None) -> str:
        text = self.to_frame().to_csv(index=False, lineterminator="\n", float_format="%.17g")
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


@dataclass
class TrainResult:
    model: SimicModel
    normalizer: Normalizer
    log: TrainLog
    checkpoint_path: Optional[Path] = None


@dataclass
class _SplitData:
    ids: List[str]
    images: np.ndarray
    targets: np.ndarray
    structure: Optional[np.ndarray]

    def batch(self, index: np.ndarray) -> Tuple[Tensor, Tensor, Optional[Tensor]]:
        structure = None if self.structure is None else Tensor(self.structure[index])
        return images_to_tensor(self.images[index]), Tensor(self.targets[index]), structure


def _prepare(manifest: Manifest, split: str, normalizer: Normalizer, mode: str) -> _SplitData:
    subset = manifest.get_split(split)
    labels = subset.labels()
    structure = normalizer.normalize_structure(labels[:, :2]) if mode == "half" else None
    return _SplitData(
        ids=subset["id"].tolist(),
        images=subset.load_images(),
        targets=normalizer.normalize_targets(labels, mode),
        structure=structure,
    )


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    """
    Seeded shuffle cut into batches of `batch_size`.

    The last partial batch is kept; if it would hold a single sample it is
    merged into the previous batch so batch norm always sees two samples.
    """
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def _validation_loss(model: SimicModel, data: _SplitData, config: TrainConfig) -> float:
    model.eval()
    total = 0.0
    with no_grad():
        for start in range(0, len(data.ids), config.batch_size):
            index = np.arange(start, min(start + config.batch_size, len(data.ids)))
            images, targets, structure = data.batch(index)
            out = model(images, structure).predictions
            total += huber_loss(out, targets, config.delta, "sum").item()
    model.train()
    return total / len(data.ids)


def train(
    model: SimicModel,
    manifest: Manifest,
    config: Optional[TrainConfig] = None,
    normalizer: Optional[Normalizer] = None,
) -> TrainResult:
    """
    Trains a model with Adam and early stopping on the validation Huber loss.

    Every epoch shuffles the train split with the seeded generator and takes
    one optimizer step per minibatch. Training stops once the validation loss
    has not improved by more than 1e-6 for `patience` epochs; the weights of
    the best epoch are restored and, with `checkpoint_path`, saved.

    Args:
        model (SimicModel):
            Freshly built (or partially trained) model, updated in place.
        manifest (Manifest):
            Manifest with train and val rows; augmentation is already applied
            if wanted.
        config (TrainConfig, optional):
            Defaults to `None`, meaning `TrainConfig()`.
        normalizer (Normalizer, optional):
            Target statistics. Defaults to `None`, meaning they are fitted on
            the train split.

    Returns:
        TrainResult: the model with the best weights, its normalizer, the log
            and the checkpoint path.

    Raises:
        ValueError: If the train split has fewer than 2 samples or the val
            split is empty.
        FloatingPointError: If a batch loss is not finite.
    """
    config = config or TrainConfig()
    mode = model.config.mode
    train_rows = manifest.get_split("train")
    if len(train_rows) < 2:
        raise ValueError(f"train split needs at least 2 samples, got {len(train_rows)}")
    if manifest.get_split("val").empty:
        raise ValueError("val split is empty; early stopping needs validation data")

    normalizer = normalizer or Normalizer.fit(train_rows.labels())
    train_data = _prepare(manifest, "train", normalizer, mode)
    val_data = _prepare(manifest, "val", normalizer, mode)
    logger.info("training %s on %d samples, validating on %d", model.config.name,
                len(train_data.ids), len(val_data.ids))

    rng = np.random.default_rng(config.seed)
    optimizer = Adam(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    log = TrainLog()
    best_state = model.state_dict()
    best_loss = math.inf
    waited = 0

    model.train()
    epochs = tqdm(range(config.max_epochs), desc=model.config.name, unit="epoch",
                  disable=not config.progress, leave=False)
    for epoch in epochs:
        started = time.perf_counter()
        total = 0.0
        for batch_number, index in enumerate(minibatches(len(train_data.ids), config.batch_size, rng)):
            images, targets, structure = train_data.batch(index)
            optimizer.zero_grad()
            loss = huber_loss(model(images, structure).predictions, targets, config.delta, config.reduction)
            value = loss.item()
            if not math.isfinite(value):
                ids = [train_data.ids[i] for i in index]
                raise FloatingPointError(
                    f"loss became {value} in epoch {epoch + 1}, batch {batch_number + 1} (samples {', '.join(ids)}); "
                    f"try a smaller learning rate"
                )
            loss.backward()
            optimizer.step()
            total += value * (len(index) if config.reduction == "mean" else 1.0)

        log.train_loss.append(total / len(train_data.ids))
        log.val_loss.append(_validation_loss(model, val_data, config))
        log.seconds.append(time.perf_counter() - started if config.record_wall_time else 0.0)
        epochs.set_postfix(train=f"{log.train_loss[-1]:.4g}", val=f"{log.val_loss[-1]:.4g}")

        if log.val_loss[-1] < best_loss - MIN_DELTA:
            best_loss = log.val_loss[-1]
            best_state = model.state_dict()
            log.best_epoch = epoch
            waited = 0
        else:
            waited += 1
            if waited >= config.patience:
                logger.info("early stop after epoch %d, best epoch %d", epoch + 1, log.best_epoch + 1)
                break

    model.load_state_dict(best_state)
    model.eval()
    path = None
    if config.checkpoint_path is not None:
        path = save_checkpoint(config.checkpoint_path, model, normalizer)
    return TrainResult(model=model, normalizer=normalizer, log=log, checkpoint_path=path)
