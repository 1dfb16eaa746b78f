"""Density labeling from building-area-ratio and building-height grids.

Each 30 m cell is labeled from the 5x5 block centered on it (150 x 150 m,
2.25 ha).  Horizontal classes follow the block's mean building-area ratio
(compact >= 0.30, open >= 0.15, sparse >= 0.02, else not built-up); vertical
classes require a built block (ratio >= 0.02) and split at a 10 m mean
building height.  Block mean height is weighted by each cell's footprint
ratio so empty cells do not dilute it.  Edge blocks are truncated rather
than discarded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .raster import MultiBandRaster

HORIZONTAL = "horizontal"
VERTICAL = "vertical"

UNLABELED = -1

# Class codes, ordered from least to most dense/tall.
NOT_BUILT = 0
SPARSE = 1
OPEN = 2
COMPACT = 3
LOW = 1
HIGH = 2

HORIZONTAL_CLASSES = ["not_built", "sparse", "open", "compact"]
VERTICAL_CLASSES = ["not_built", "low", "high"]

NO_GROWTH = 0
GROWTH = 1
GROWTH_CLASSES = ["no_growth", "growth"]


def class_names(dimension: str) -> list[str]:
    if dimension == HORIZONTAL:
        return list(HORIZONTAL_CLASSES)
    if dimension == VERTICAL:
        return list(VERTICAL_CLASSES)
    raise ValueError(f"unknown dimension {dimension!r}")


@dataclass
class DensityScheme:
    compact_min: float = 0.30
    open_min: float = 0.15
    built_min: float = 0.02
    high_min_height: float = 10.0
    block_half_extent: int = 2  # 5x5 block at 30 m cells

    def __post_init__(self):
        if not self.compact_min > self.open_min > self.built_min > 0:
            raise ValueError(
                "thresholds must be strictly decreasing and positive: "
                f"{self.compact_min} > {self.open_min} > {self.built_min} > 0"
            )
        if self.high_min_height <= 0:
            raise ValueError("high_min_height must be positive")


@dataclass
class DensityLabelGrid:
    """Per-cell class codes for one density dimension at one epoch.

    ``labels`` is (height, width) int16; UNLABELED (-1) marks cells without
    a label.  Geometry mirrors MultiBandRaster.
    """

    width: int
    height: int
    dimension: str
    epoch: int
    labels: np.ndarray = field(repr=False)
    cell_size: float = 30.0
    origin_x: float = 0.0
    origin_y: float = 0.0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int16).reshape(self.height, self.width)
        if self.dimension not in (HORIZONTAL, VERTICAL):
            raise ValueError(f"unknown dimension {self.dimension!r}")
        n = len(class_names(self.dimension))
        bad = (self.labels != UNLABELED) & ((self.labels < 0) | (self.labels >= n))
        if bad.any():
            raise ValueError(f"label codes outside [0, {n}) present")

    @property
    def n_classes(self) -> int:
        return len(class_names(self.dimension))

    def same_geometry(self, other) -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and self.cell_size == other.cell_size
            and self.origin_x == other.origin_x
            and self.origin_y == other.origin_y
        )

    def to_raster(self) -> MultiBandRaster:
        """One-band raster of class codes; unlabeled cells become NaN."""
        data = self.labels.astype(np.float64)
        data[self.labels == UNLABELED] = np.nan
        table = ";".join(f"{i}={n}" for i, n in enumerate(class_names(self.dimension)))
        name = f"{self.dimension}_labels;epoch={self.epoch};{table}"
        return MultiBandRaster(
            width=self.width,
            height=self.height,
            bands=1,
            band_names=[name],
            cell_size=self.cell_size,
            origin_x=self.origin_x,
            origin_y=self.origin_y,
            data=data[None],
        )

    @classmethod
    def from_raster(cls, raster: MultiBandRaster) -> "DensityLabelGrid":
        name = raster.band_names[0]
        parts = name.split(";")
        dimension = parts[0].removesuffix("_labels")
        epoch = 0
        for part in parts[1:]:
            if part.startswith("epoch="):
                epoch = int(part.removeprefix("epoch="))
        vals = raster.data[0]
        labels = np.where(np.isfinite(vals), vals, UNLABELED).astype(np.int16)
        return cls(
            width=raster.width,
            height=raster.height,
            dimension=dimension,
            epoch=epoch,
            labels=labels,
            cell_size=raster.cell_size,
            origin_x=raster.origin_x,
            origin_y=raster.origin_y,
        )


def classify_horizontal(block_bar: float, scheme: DensityScheme = DensityScheme()) -> int:
    """Horizontal class of a block mean building-area ratio; ties go upward."""
    if block_bar >= scheme.compact_min:
        return COMPACT
    if block_bar >= scheme.open_min:
        return OPEN
    if block_bar >= scheme.built_min:
        return SPARSE
    return NOT_BUILT


def classify_vertical(
    block_bar: float, block_mean_height: float, scheme: DensityScheme = DensityScheme()
) -> int:
    if block_bar < scheme.built_min:
        return NOT_BUILT
    return HIGH if block_mean_height >= scheme.high_min_height else LOW


def block_aggregate(
    bar_grid: MultiBandRaster,
    height_grid: MultiBandRaster,
    cell: tuple[int, int],
    scheme: DensityScheme = DensityScheme(),
) -> tuple[float, float]:
    """(block mean ratio, footprint-weighted block mean height) for one cell.

    The block is truncated at grid edges.  Height is averaged over block
    cells with ratio > 0, weighted by ratio; 0 when no cell is built.
    """
    if not bar_grid.same_geometry(height_grid):
        raise ValueError("bar and height grids must share geometry")
    r, c = cell
    if not (0 <= r < bar_grid.height and 0 <= c < bar_grid.width):
        raise ValueError(f"cell {cell} out of bounds")
    h = scheme.block_half_extent
    r0, r1 = max(0, r - h), min(bar_grid.height, r + h + 1)
    c0, c1 = max(0, c - h), min(bar_grid.width, c + h + 1)
    bar = np.nan_to_num(bar_grid.data[0, r0:r1, c0:c1])
    hgt = np.nan_to_num(height_grid.data[0, r0:r1, c0:c1])
    block_bar = float(bar.mean())
    weight = bar[bar > 0]
    if weight.size == 0:
        return block_bar, 0.0
    mean_height = float((bar * hgt)[bar > 0].sum() / weight.sum())
    return block_bar, mean_height


def _block_sums(grid: np.ndarray, half: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell sum and cell count over the truncated (2h+1)^2 block."""
    height, width = grid.shape
    padded = np.zeros((height + 2 * half, width + 2 * half))
    padded[half : half + height, half : half + width] = grid
    counts = np.zeros((height + 2 * half, width + 2 * half))
    counts[half : half + height, half : half + width] = 1.0
    total = np.zeros((height, width))
    n = np.zeros((height, width))
    for dr in range(2 * half + 1):
        for dc in range(2 * half + 1):
            total += padded[dr : dr + height, dc : dc + width]
            n += counts[dr : dr + height, dc : dc + width]
    return total, n


def label_grid(
    bar_grid: MultiBandRaster,
    height_grid: MultiBandRaster,
    dimension: str,
    epoch: int,
    scheme: DensityScheme = DensityScheme(),
) -> DensityLabelGrid:
    """Label every cell of a grid; vectorized equivalent of block_aggregate."""
    if not bar_grid.same_geometry(height_grid):
        raise ValueError("bar and height grids must share geometry")
    h = scheme.block_half_extent
    bar = np.nan_to_num(bar_grid.data[0])
    hgt = np.nan_to_num(height_grid.data[0])
    bar_sum, n = _block_sums(bar, h)
    block_bar = bar_sum / n
    if dimension == HORIZONTAL:
        labels = np.full(bar.shape, NOT_BUILT, dtype=np.int16)
        labels[block_bar >= scheme.built_min] = SPARSE
        labels[block_bar >= scheme.open_min] = OPEN
        labels[block_bar >= scheme.compact_min] = COMPACT
    elif dimension == VERTICAL:
        wh_sum, _ = _block_sums(np.where(bar > 0, bar * hgt, 0.0), h)
        w_sum, _ = _block_sums(np.where(bar > 0, bar, 0.0), h)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean_height = np.where(w_sum > 0, wh_sum / np.where(w_sum > 0, w_sum, 1.0), 0.0)
        labels = np.full(bar.shape, NOT_BUILT, dtype=np.int16)
        built = block_bar >= scheme.built_min
        labels[built & (mean_height < scheme.high_min_height)] = LOW
        labels[built & (mean_height >= scheme.high_min_height)] = HIGH
    else:
        raise ValueError(f"unknown dimension {dimension!r}")
    return DensityLabelGrid(
        width=bar_grid.width,
        height=bar_grid.height,
        dimension=dimension,
        epoch=epoch,
        labels=labels,
        cell_size=bar_grid.cell_size,
        origin_x=bar_grid.origin_x,
        origin_y=bar_grid.origin_y,
    )


def derive_growth_labels(earlier: DensityLabelGrid, later: DensityLabelGrid) -> np.ndarray:
    """GROWTH where the later label is strictly denser/higher, else NO_GROWTH.

    Class codes are already ordered by density within each dimension, so the
    comparison is a plain integer one.  Cells unlabeled on either side are
    NO_GROWTH.
    """
    if earlier.dimension != later.dimension:
        raise ValueError(
            f"dimension mismatch: {earlier.dimension} vs {later.dimension}"
        )
    if not earlier.same_geometry(later):
        raise ValueError("growth requires identical geometry")
    if not earlier.epoch < later.epoch:
        raise ValueError(f"epochs must increase: {earlier.epoch} !< {later.epoch}")
    both = (earlier.labels != UNLABELED) & (later.labels != UNLABELED)
    growth = both & (later.labels > earlier.labels)
    return np.where(growth, GROWTH, NO_GROWTH).astype(np.int16)
