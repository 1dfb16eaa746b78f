"""Temporal smoothing of annual classification series.

Per-pixel class probability tracks are convolved with Savitzky-Golay
weights (the least-squares polynomial fit evaluated at the window center),
then clamped to be non-negative and renormalized; the argmax gives the
smoothed label.  The first and last window//2 years carry no label.
Probabilities rather than class codes are smoothed because horizontal
classes are nominal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import MultiBandRaster


def savgol_coefficients(window: int, polyorder: int) -> np.ndarray:
    """Convolution weights of the centered least-squares polynomial fit.

    Weights sum to 1 and are symmetric about the center.
    """
    if window % 2 == 0 or window < 1:
        raise ValueError(f"window must be odd and positive, got {window}")
    if polyorder >= window:
        raise ValueError(f"polyorder {polyorder} must be below window {window}")
    half = window // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    design = np.vander(x, polyorder + 1, increasing=True)
    # Center-value row of the least-squares projection: e0^T (A^T A)^-1 A^T.
    ata = design.T @ design
    rhs = np.zeros(polyorder + 1)
    rhs[0] = 1.0
    return design @ np.linalg.solve(ata, rhs)


@dataclass
class ClassSeries:
    """Annual per-class probabilities for one cell."""

    years: list[int]
    probabilities: np.ndarray  # (n_years, n_classes)

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        if self.probabilities.shape[0] != len(self.years):
            raise ValueError("one probability row per year required")
        diffs = np.diff(self.years)
        if len(self.years) > 1 and not np.all(diffs == 1):
            raise ValueError("years must be strictly increasing and contiguous")


@dataclass
class SmoothedSeries:
    years: list[int]
    probabilities: np.ndarray
    labels: np.ndarray


def _smooth_tracks(probs: np.ndarray, window: int, polyorder: int) -> np.ndarray:
    """Valid-mode convolution of each class track, clamped and renormalized."""
    weights = savgol_coefficients(window, polyorder)
    n_years, n_classes = probs.shape
    out = np.empty((n_years - window + 1, n_classes))
    for c in range(n_classes):
        out[:, c] = np.convolve(probs[:, c], weights[::-1], mode="valid")
    out = np.maximum(out, 0.0)
    return out / out.sum(axis=1, keepdims=True)


def smooth_class_series(series: ClassSeries, window: int = 5, polyorder: int = 2) -> SmoothedSeries:
    """Smoothed labels for interior years; window//2 years dropped each end."""
    if len(series.years) < window:
        raise ValueError(
            f"series of {len(series.years)} years shorter than window {window}"
        )
    half = window // 2
    probs = _smooth_tracks(series.probabilities, window, polyorder)
    return SmoothedSeries(
        years=list(series.years[half : len(series.years) - half]),
        probabilities=probs,
        labels=np.argmax(probs, axis=1).astype(np.int16),
    )


def smooth_probability_rasters(
    rasters_by_year: dict[int, MultiBandRaster], window: int = 5, polyorder: int = 2
) -> dict[int, MultiBandRaster]:
    """Apply the filter along time to whole per-class probability rasters.

    Cells that are NaN in any contributing year stay NaN.  Returns one
    raster per interior year.
    """
    years = sorted(rasters_by_year)
    if len(years) < window:
        raise ValueError(f"{len(years)} years shorter than window {window}")
    if years != list(range(years[0], years[0] + len(years))):
        raise ValueError("years must be contiguous")
    template = rasters_by_year[years[0]]
    stack = np.stack([rasters_by_year[y].data for y in years])  # (Y, C, H, W)
    weights = savgol_coefficients(window, polyorder)
    half = window // 2
    out: dict[int, MultiBandRaster] = {}
    for i, year in enumerate(years[half : len(years) - half]):
        sm = np.tensordot(weights, stack[i : i + window], axes=(0, 0))
        sm = np.maximum(sm, 0.0)
        total = sm.sum(axis=0, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            sm = np.where(total > 0, sm / total, np.nan)
        out[year] = template.copy_with(sm)
    return out
