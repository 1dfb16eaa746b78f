"""Model training on masked patches and tiled whole-map prediction.

Training minimizes softmax cross-entropy averaged over loss-mask-true cells
with Adam, shuffling patches each epoch with a seeded generator.  After
every epoch the model is scored on the validation set; the parameters of
the epoch with the best validation average F1 are returned together with a
per-epoch log.

Prediction tiles the raster with 50% default overlap (the last tiles are
clamped to the border), averages softmax probabilities over all tiles
covering a cell, and takes the argmax.  Cells with missing input emit no
label.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..labeler import HORIZONTAL, VERTICAL, UNLABELED, DensityLabelGrid
from ..raster import MultiBandRaster
from ..sampler import PatchDataset
from .autograd import Adam, Tensor, masked_cross_entropy, no_grad, softmax_channels
from .models import ModelConfig, ModelParams, init_params, model_forward


@dataclass
class EpochLog:
    epoch: int
    loss: float
    val_oa: float
    val_avg_f1: float


def _batch_arrays(patches):
    inputs = np.stack([np.nan_to_num(p.input, nan=0.0) for p in patches])
    labels = np.stack([p.labels for p in patches]).astype(np.int64)
    masks = np.stack([p.loss_mask for p in patches])
    labels[~masks] = 0
    return inputs, labels, masks


def _validate(config: ModelConfig, params: ModelParams, dataset: PatchDataset):
    """(overall accuracy, average F1) over masked validation cells."""
    hits = 0
    total = 0
    n = config.n_classes
    tp = np.zeros(n)
    fp = np.zeros(n)
    fn = np.zeros(n)
    with no_grad():
        for start in range(0, len(dataset.patches), config.batch_size):
            chunk = dataset.patches[start : start + config.batch_size]
            inputs, labels, masks = _batch_arrays(chunk)
            logits = model_forward(config, params, Tensor(inputs), training=False)
            pred = np.argmax(logits.data, axis=1)
            good = masks
            hits += int(np.sum((pred == labels) & good))
            total += int(good.sum())
            for c in range(n):
                tp[c] += np.sum((pred == c) & (labels == c) & good)
                fp[c] += np.sum((pred == c) & (labels != c) & good)
                fn[c] += np.sum((pred != c) & (labels == c) & good)
    oa = hits / total if total else float("nan")
    f1s = []
    for c in range(n):
        if tp[c] + fn[c] == 0:
            continue  # class absent from the references
        denom = 2 * tp[c] + fp[c] + fn[c]
        f1s.append(2 * tp[c] / denom if denom > 0 else 0.0)
    return oa, float(np.mean(f1s)) if f1s else float("nan")


def train_model(
    config: ModelConfig, train: PatchDataset, validation: PatchDataset
) -> tuple[ModelParams, list[EpochLog]]:
    """Adam training with per-epoch validation; returns the best epoch's params."""
    if not train.patches or not validation.patches:
        raise ValueError("training and validation datasets must be nonempty")
    for p in train.patches + validation.patches:
        labeled = p.labels[p.loss_mask]
        if labeled.size and labeled.max() >= config.n_classes:
            raise ValueError(
                f"label {int(labeled.max())} outside the {config.n_classes}-class model"
            )
    if not any(p.loss_mask.any() for p in train.patches):
        raise ValueError("every training patch has an empty loss mask")
    params = init_params(config)
    optimizer = Adam(params.trainable(), lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    logs: list[EpochLog] = []
    best: tuple[float, ModelParams] | None = None
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train.patches))
        losses = []
        for start in range(0, order.size, config.batch_size):
            chunk = [train.patches[i] for i in order[start : start + config.batch_size]]
            inputs, labels, masks = _batch_arrays(chunk)
            if not masks.any():
                continue
            optimizer.zero_grad()
            logits = model_forward(config, params, Tensor(inputs), training=True)
            loss = masked_cross_entropy(logits, labels, masks)
            if not np.isfinite(loss.data):
                raise ValueError(
                    f"NaN loss at epoch {epoch}, step {start // config.batch_size}"
                )
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        val_oa, val_f1 = _validate(config, params, validation)
        logs.append(EpochLog(epoch, float(np.mean(losses)), val_oa, val_f1))
        if best is None or val_f1 > best[0]:
            best = (val_f1, params.copy())
    return best[1], logs


def save_training_log(logs: list[EpochLog], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "val_oa", "val_avg_f1"])
        for log in logs:
            writer.writerow([log.epoch, repr(log.loss), repr(log.val_oa), repr(log.val_avg_f1)])


def _dimension_for(n_classes: int) -> str:
    return HORIZONTAL if n_classes == 4 else VERTICAL


def predict_map(
    config: ModelConfig,
    params: ModelParams,
    composite: MultiBandRaster,
    step: int = 24,
    epoch: int = 0,
    dimension: str | None = None,
) -> tuple[DensityLabelGrid, MultiBandRaster]:
    """Tile, average softmax probabilities, argmax.

    Returns the label grid and a per-class probability raster; cells with a
    missing band in the composite are unlabeled with NaN probabilities.
    """
    size = config.patch_size
    height, width = composite.height, composite.width
    if height < size or width < size:
        raise ValueError(f"raster {height}x{width} smaller than patch size {size}")
    data = composite.data
    missing = np.any(~np.isfinite(data), axis=0)
    clean = np.nan_to_num(data, nan=0.0)
    origins_r = list(range(0, height - size + 1, step))
    if origins_r[-1] != height - size:
        origins_r.append(height - size)
    origins_c = list(range(0, width - size + 1, step))
    if origins_c[-1] != width - size:
        origins_c.append(width - size)
    prob_sum = np.zeros((config.n_classes, height, width))
    cover = np.zeros((height, width))
    tiles = [(r, c) for r in origins_r for c in origins_c]
    with no_grad():
        for start in range(0, len(tiles), config.batch_size):
            chunk = tiles[start : start + config.batch_size]
            batch = np.stack([clean[:, r : r + size, c : c + size] for r, c in chunk])
            logits = model_forward(config, params, Tensor(batch), training=False)
            probs = softmax_channels(logits.data)
            for k, (r, c) in enumerate(chunk):
                prob_sum[:, r : r + size, c : c + size] += probs[k]
                cover[r : r + size, c : c + size] += 1.0
    probs = prob_sum / cover
    labels = np.argmax(probs, axis=0).astype(np.int16)
    labels[missing] = UNLABELED
    probs[:, missing] = np.nan
    dim = dimension or _dimension_for(config.n_classes)
    grid = DensityLabelGrid(
        width=width,
        height=height,
        dimension=dim,
        epoch=epoch,
        labels=labels,
        cell_size=composite.cell_size,
        origin_x=composite.origin_x,
        origin_y=composite.origin_y,
    )
    names = [f"prob_class{c}" for c in range(config.n_classes)]
    return grid, composite.copy_with(probs, names)
