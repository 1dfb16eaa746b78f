"""Training-data construction: thinning, class balancing, patch extraction.

Labeled cells become patch datasets under three constraints: a 150 m minimum
distance between sites (redundancy), a cap on the dominant class at five
times the second most frequent (imbalance), and removal of patches whose
labels are all not-built (heterogeneity).  Supervision is sparse, so every
patch carries a loss mask that is true only at retained site cells.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .labeler import NOT_BUILT, UNLABELED, DensityLabelGrid
from .raster import MultiBandRaster, read_raster, write_raster


@dataclass
class SampleSite:
    row: int
    col: int
    label: int
    epoch: int = 0


@dataclass
class Patch:
    input: np.ndarray        # (bands, size, size) float64
    labels: np.ndarray       # (size, size) int16, UNLABELED outside sites
    loss_mask: np.ndarray    # (size, size) bool
    origin: tuple[int, int]  # (row, col) of the top-left cell


@dataclass
class PatchDataset:
    patches: list[Patch]
    patch_size: int
    step: int
    band_names: list[str] = field(default_factory=list)
    dimension: str = "horizontal"
    epoch: int = 0
    cell_size: float = 30.0

    def __post_init__(self):
        if self.step > self.patch_size:
            raise ValueError(f"step {self.step} exceeds patch_size {self.patch_size}")

    def __len__(self):
        return len(self.patches)

    def class_counts(self, n_classes: int) -> np.ndarray:
        counts = np.zeros(n_classes, dtype=np.int64)
        for p in self.patches:
            labs = p.labels[p.loss_mask]
            counts += np.bincount(labs, minlength=n_classes)
        return counts


def sites_from_grid(grid: DensityLabelGrid) -> list[SampleSite]:
    """One SampleSite per labeled cell, row-major order."""
    rows, cols = np.nonzero(grid.labels != UNLABELED)
    return [
        SampleSite(int(r), int(c), int(grid.labels[r, c]), grid.epoch)
        for r, c in zip(rows, cols)
    ]


def thin_by_distance(
    sites: list[SampleSite],
    min_distance: float = 150.0,
    seed: int = 0,
    cell_size: float = 30.0,
) -> list[SampleSite]:
    """Greedy thinning over a seed-shuffled order.

    A site is kept iff its center is at least min_distance (inclusive) from
    every already-kept site.  Buckets of side min_distance limit the
    candidate comparisons to the 3x3 neighborhood.
    """
    if not sites:
        return []
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(sites))
    min_d2 = (min_distance / cell_size) ** 2
    bucket_side = max(min_distance / cell_size, 1.0)
    buckets: dict[tuple[int, int], list[int]] = {}
    kept: list[SampleSite] = []
    for idx in order:
        s = sites[idx]
        key = (int(s.row / bucket_side), int(s.col / bucket_side))
        ok = True
        for br in range(key[0] - 1, key[0] + 2):
            for bc in range(key[1] - 1, key[1] + 2):
                for j in buckets.get((br, bc), ()):
                    o = kept[j]
                    d2 = (s.row - o.row) ** 2 + (s.col - o.col) ** 2
                    if d2 < min_d2:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            buckets.setdefault(key, []).append(len(kept))
            kept.append(s)
    return kept


def balance_classes(
    sites: list[SampleSite], cap_ratio: float = 5.0, seed: int = 0
) -> list[SampleSite]:
    """Downsample the most frequent class to cap_ratio x the second class."""
    labels = np.array([s.label for s in sites])
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size < 2:
        raise ValueError("balancing requires at least two classes")
    order = np.argsort(-counts, kind="stable")
    top, second = classes[order[0]], int(counts[order[1]])
    cap = int(cap_ratio * second)
    if counts[order[0]] <= cap:
        return list(sites)
    rng = np.random.default_rng(seed)
    top_idx = np.nonzero(labels == top)[0]
    keep_top = set(rng.choice(top_idx, size=cap, replace=False).tolist())
    return [s for i, s in enumerate(sites) if labels[i] != top or i in keep_top]


def _tile_origins(extent: int, patch_size: int, step: int) -> list[int]:
    """Origins covering [0, extent) at the given step, last clamped to fit."""
    origins = list(range(0, extent - patch_size + 1, step))
    if origins[-1] != extent - patch_size:
        origins.append(extent - patch_size)
    return origins


def extract_patches(
    composite: MultiBandRaster,
    labels: DensityLabelGrid,
    sites: list[SampleSite],
    patch_size: int = 48,
    step: int = 24,
) -> PatchDataset:
    """Tile patches across the raster; supervise only at site cells.

    Patches with no labeled cell, or whose labeled cells are all not-built,
    are dropped.
    """
    if not labels.same_geometry(composite):
        raise ValueError("labels and composite must share geometry")
    if patch_size > composite.height or patch_size > composite.width:
        raise ValueError(
            f"patch_size {patch_size} exceeds raster "
            f"{composite.height}x{composite.width}"
        )
    site_labels = np.full((composite.height, composite.width), UNLABELED, dtype=np.int16)
    for s in sites:
        site_labels[s.row, s.col] = s.label
    patches = []
    for r in _tile_origins(composite.height, patch_size, step):
        for c in _tile_origins(composite.width, patch_size, step):
            labs = site_labels[r : r + patch_size, c : c + patch_size]
            mask = labs != UNLABELED
            if not mask.any():
                continue
            if np.all(labs[mask] == NOT_BUILT):
                continue
            patches.append(
                Patch(
                    input=composite.data[:, r : r + patch_size, c : c + patch_size].copy(),
                    labels=labs.copy(),
                    loss_mask=mask,
                    origin=(r, c),
                )
            )
    return PatchDataset(
        patches=patches,
        patch_size=patch_size,
        step=step,
        band_names=list(composite.band_names),
        dimension=labels.dimension,
        epoch=labels.epoch,
        cell_size=composite.cell_size,
    )


def _block_side(patch_size: int) -> int:
    return patch_size


def _block_is_validation(block: tuple[int, int], seed: int, fraction: float) -> bool:
    digest = hashlib.blake2b(
        f"{seed}:{block[0]}:{block[1]}".encode(), digest_size=8
    ).digest()
    u = int.from_bytes(digest, "little") / 2.0**64
    return u < fraction


def split_train_validation(
    dataset: PatchDataset, validation_fraction: float, seed: int = 0
) -> tuple[PatchDataset, PatchDataset]:
    """Spatially disjoint split by block hashing.

    The map is partitioned into blocks of the patch size; each block hashes
    to one side.  A patch joins the side of its origin's block and its loss
    mask is restricted to cells in same-side blocks, so no labeled cell
    supervises both sides.  Patches left without usable labels (none, or
    only not-built) are dropped.
    """
    if not 0 < validation_fraction < 1:
        raise ValueError(f"validation_fraction must be in (0, 1), got {validation_fraction}")
    side = _block_side(dataset.patch_size)
    train_patches, val_patches = [], []
    for p in dataset.patches:
        r, c = p.origin
        to_val = _block_is_validation((r // side, c // side), seed, validation_fraction)
        size = dataset.patch_size
        rows = (np.arange(r, r + size) // side)[:, None]
        cols = (np.arange(c, c + size) // side)[None, :]
        same = np.empty((size, size), dtype=bool)
        for br in np.unique(rows):
            for bc in np.unique(cols):
                cell_val = _block_is_validation((int(br), int(bc)), seed, validation_fraction)
                same[(rows == br) & (cols == bc)] = cell_val == to_val
        mask = p.loss_mask & same
        if not mask.any() or np.all(p.labels[mask] == NOT_BUILT):
            continue
        labs = np.where(mask, p.labels, UNLABELED).astype(np.int16)
        trimmed = Patch(input=p.input, labels=labs, loss_mask=mask, origin=p.origin)
        (val_patches if to_val else train_patches).append(trimmed)
    if not train_patches or not val_patches:
        raise ValueError(
            f"split with fraction {validation_fraction} left an empty side "
            f"({len(train_patches)} train, {len(val_patches)} validation)"
        )
    mk = lambda patches: PatchDataset(
        patches=patches,
        patch_size=dataset.patch_size,
        step=dataset.step,
        band_names=list(dataset.band_names),
        dimension=dataset.dimension,
        epoch=dataset.epoch,
        cell_size=dataset.cell_size,
    )
    return mk(train_patches), mk(val_patches)


def save_dataset(dataset: PatchDataset, directory) -> None:
    """Persist as manifest.csv plus per-patch DMR1 triples."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, p in enumerate(dataset.patches):
        size = dataset.patch_size
        base = MultiBandRaster(
            width=size,
            height=size,
            bands=p.input.shape[0],
            band_names=list(dataset.band_names),
            cell_size=dataset.cell_size,
            origin_x=p.origin[1] * dataset.cell_size,
            origin_y=-p.origin[0] * dataset.cell_size,
            data=p.input,
        )
        write_raster(base, directory / f"input_{i:05d}.dmr")
        lab = p.labels.astype(np.float64)
        lab[p.labels == UNLABELED] = np.nan
        write_raster(base.copy_with(lab[None], ["labels"]), directory / f"labels_{i:05d}.dmr")
        write_raster(
            base.copy_with(p.loss_mask.astype(np.float64)[None], ["loss_mask"]),
            directory / f"mask_{i:05d}.dmr",
        )
        rows.append((i, p.origin[0], p.origin[1], dataset.epoch, int(p.loss_mask.sum())))
    with open(directory / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["index", "origin_row", "origin_col", "epoch", "labeled_cells",
             "patch_size", "step", "dimension", "bands"]
        )
        for row in rows:
            writer.writerow(
                list(row) + [dataset.patch_size, dataset.step, dataset.dimension,
                             "|".join(dataset.band_names)]
            )


def load_dataset(directory) -> PatchDataset:
    directory = Path(directory)
    with open(directory / "manifest.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"empty dataset manifest in {directory}")
    patches = []
    for row in rows:
        i = int(row["index"])
        inp = read_raster(directory / f"input_{i:05d}.dmr")
        lab = read_raster(directory / f"labels_{i:05d}.dmr").data[0]
        mask = read_raster(directory / f"mask_{i:05d}.dmr").data[0] > 0.5
        labels = np.where(np.isfinite(lab), lab, UNLABELED).astype(np.int16)
        patches.append(
            Patch(
                input=inp.data,
                labels=labels,
                loss_mask=mask,
                origin=(int(row["origin_row"]), int(row["origin_col"])),
            )
        )
    first = rows[0]
    return PatchDataset(
        patches=patches,
        patch_size=int(first["patch_size"]),
        step=int(first["step"]),
        band_names=first["bands"].split("|"),
        dimension=first["dimension"],
        epoch=int(first["epoch"]),
    )
