"""Annual cloud-free compositing and cross-year standardization.

Dated, QA-masked observations are reduced to one raster per year by a
per-cell, per-band median over a rolling window of years (3 by default).
Composites are then divided band-wise by fixed divisors (the 99.5th
percentile of the training-year composite) so every year of a time series
shares one radiometric scale.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field

import numpy as np

from .raster import MultiBandRaster

# Band divisors of the Danish 2014 training composite (99.5th percentile
# surface reflectance per band): blue, green, red, NIR, SWIR1, SWIR2.
DENMARK_2014_DIVISORS = {
    "blue": 0.1024,
    "green": 0.1374,
    "red": 0.1532,
    "nir": 0.4679,
    "swir1": 0.2872,
    "swir2": 0.2207,
}

DEFAULT_SEASON = ((5, 1), (8, 31))  # May 1 .. Aug 31, inclusive


@dataclass
class Observation:
    date: dt.date
    raster: MultiBandRaster
    qa: np.ndarray  # (height, width) bool, True = good sample

    def __post_init__(self):
        self.qa = np.asarray(self.qa, dtype=bool)
        if self.qa.shape != (self.raster.height, self.raster.width):
            raise ValueError(
                f"qa shape {self.qa.shape} does not match raster "
                f"({self.raster.height}, {self.raster.width})"
            )


@dataclass
class ObservationStack:
    observations: list[Observation] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.observations:
            return
        first = self.observations[0].raster
        for obs in self.observations[1:]:
            if not obs.raster.same_geometry(first) or obs.raster.band_names != first.band_names:
                raise ValueError(
                    f"observation {obs.date} geometry/bands differ from the stack"
                )

    def __len__(self):
        return len(self.observations)

    def __add__(self, other: "ObservationStack") -> "ObservationStack":
        return ObservationStack(self.observations + other.observations)


@dataclass
class BandScales:
    """Per-band divisors max(rho_b) used to standardize composites."""

    band_names: list[str]
    divisors: np.ndarray
    source_year: int
    percentile: float = 0.995

    def __post_init__(self):
        self.divisors = np.asarray(self.divisors, dtype=np.float64)
        if len(self.band_names) != self.divisors.size:
            raise ValueError("one divisor per band required")
        if np.any(self.divisors <= 0):
            raise ValueError(f"divisors must be positive, got {self.divisors}")

    def save(self, path) -> None:
        lines = [f"source_year={self.source_year}", f"percentile={self.percentile!r}"]
        for name, d in zip(self.band_names, self.divisors):
            lines.append(f"{name}={float(d)!r}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "BandScales":
        names, divisors = [], []
        source_year, percentile = 0, 0.995
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                key, _, value = line.partition("=")
                if key == "source_year":
                    source_year = int(value)
                elif key == "percentile":
                    percentile = float(value)
                else:
                    names.append(key)
                    divisors.append(float(value))
        return cls(names, np.array(divisors), source_year, percentile)


def filter_observations(stack: ObservationStack, season=DEFAULT_SEASON) -> ObservationStack:
    """Retain observations whose month-day falls inside the season, inclusive.

    The default season keeps May through August; a wrapped season such as
    ((11, 1), (2, 28)) is also honored.
    """
    (sm, sd), (em, ed) = season
    start, end = (sm, sd), (em, ed)
    kept = []
    for obs in stack.observations:
        md = (obs.date.month, obs.date.day)
        inside = start <= md <= end if start <= end else (md >= start or md <= end)
        if inside:
            kept.append(obs)
    return ObservationStack(kept)


def rolling_median_composite(
    stack: ObservationStack, target_year: int, window_years: int = 3
) -> MultiBandRaster:
    """Per-cell, per-band median of good observations in a year window.

    The window spans [target_year - w//2, target_year + w//2].  Samples are
    used only where the QA flag is good and the value is finite; an even
    count takes the mean of the two middle values and zero good samples
    yield NaN.
    """
    if window_years % 2 == 0 or window_years < 1:
        raise ValueError(f"window_years must be odd and positive, got {window_years}")
    half = window_years // 2
    lo, hi = target_year - half, target_year + half
    selected = [o for o in stack.observations if lo <= o.date.year <= hi]
    if not selected:
        raise ValueError(f"no observations within years [{lo}, {hi}]")
    template = selected[0].raster
    bands, height, width = template.shape
    samples = np.empty((len(selected), bands, height, width))
    for k, obs in enumerate(selected):
        vals = obs.raster.data.copy()
        vals[:, ~obs.qa] = np.nan
        samples[k] = vals
    # np.sort places NaN last; counting finite samples locates the middle.
    samples.sort(axis=0)
    n = np.sum(np.isfinite(samples), axis=0)
    lo_idx = np.maximum(n - 1, 0) // 2
    hi_idx = np.maximum(n, 1) // 2
    lo_val = np.take_along_axis(samples, lo_idx[None], axis=0)[0]
    hi_val = np.take_along_axis(samples, hi_idx[None], axis=0)[0]
    median = 0.5 * (lo_val + hi_val)
    median[n == 0] = np.nan
    return template.copy_with(median)


def compute_band_scales(
    composite: MultiBandRaster, percentile: float = 0.995, source_year: int = 0
) -> BandScales:
    """Nearest-rank percentile of each band's finite samples."""
    if not 0 < percentile <= 1:
        raise ValueError(f"percentile must be in (0, 1], got {percentile}")
    divisors = []
    for b, name in enumerate(composite.band_names):
        vals = composite.data[b][np.isfinite(composite.data[b])]
        if vals.size == 0:
            raise ValueError(f"band {name!r} has no finite samples")
        vals = np.sort(vals)
        rank = min(max(math.ceil(percentile * vals.size), 1), vals.size)
        divisors.append(vals[rank - 1])
    return BandScales(list(composite.band_names), np.array(divisors), source_year, percentile)


def standardize(composite: MultiBandRaster, scales: BandScales) -> MultiBandRaster:
    """Divide each band by its fixed divisor; no clipping, NaN passes through.

    The same scales must be applied to every year of a time series so that
    between-year differences are preserved.
    """
    if scales.divisors.size != composite.bands:
        raise ValueError(
            f"{scales.divisors.size} scales for {composite.bands} bands"
        )
    out = composite.data / scales.divisors[:, None, None]
    return composite.copy_with(out)
