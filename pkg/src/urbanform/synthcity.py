"""Synthetic-city ground truth for end-to-end desk-scale verification.

A seeded scenario carries an annual timeline of building-area-ratio and
building-height grids for a city with a compact high-rise core, a tower
district, low industrial slabs, dotted residential suburbs, a sparse
fringe and open fields.  Reflectance is rendered by linear two-endmember
mixing (ratio weighting a built spectrum against vegetation), optionally
scaled by a per-epoch, per-band drift bias to emulate sensor or
illumination differences between epochs, plus seeded Gaussian noise and
random QA dropout standing in for clouds.

Density changes only where the growth script acts, so scripted regions can
be asserted against derived labels.
"""

from __future__ import annotations

import csv
import datetime as dt
import zlib
from dataclasses import dataclass, field

import numpy as np

from .composite import Observation, ObservationStack
from .raster import MultiBandRaster

BAND_NAMES = ["blue", "green", "red", "nir", "swir1", "swir2"]

VEGETATION_SPECTRUM = np.array([0.040, 0.070, 0.050, 0.450, 0.250, 0.120])
BUILT_SPECTRUM = np.array([0.120, 0.140, 0.160, 0.220, 0.300, 0.280])

ACTIONS = ("infill", "highrise", "sprawl", "demolish")

# Normalized (r0, c0, r1, c1) boxes of one city cluster; the cluster is
# rendered once per horizontal half of the grid.
_CLUSTER_BOXES = {
    "cbd": (0.38, 0.36, 0.60, 0.62),
    "towers": (0.12, 0.52, 0.32, 0.86),
    "industry": (0.66, 0.10, 0.84, 0.38),
    "suburbs": (0.24, 0.20, 0.76, 0.80),
    "fringe": (0.04, 0.04, 0.96, 0.96),
}


@dataclass
class GrowthAction:
    year: int
    region: str
    action: str

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"unknown growth action {self.action!r}")


@dataclass
class CityScenario:
    seed: int
    size: int
    years: list[int]
    bar_grids: dict[int, np.ndarray]
    height_grids: dict[int, np.ndarray]
    regions: dict[str, tuple[int, int, int, int]]  # (r0, c0, r1, c1), half-open
    script: list[GrowthAction] = field(default_factory=list)
    drift: dict[int, np.ndarray] = field(default_factory=dict)

    def region_mask(self, name: str) -> np.ndarray:
        r0, c0, r1, c1 = self.regions[name]
        mask = np.zeros((self.size, self.size), dtype=bool)
        mask[r0:r1, c0:c1] = True
        return mask

    def bar_raster(self, year: int) -> MultiBandRaster:
        return _grid_raster(self.bar_grids[year], "building_area_ratio")

    def height_raster(self, year: int) -> MultiBandRaster:
        return _grid_raster(self.height_grids[year], "building_height_m")


def _grid_raster(grid: np.ndarray, name: str) -> MultiBandRaster:
    h, w = grid.shape
    return MultiBandRaster(width=w, height=h, bands=1, band_names=[name],
                           data=grid[None].astype(np.float64))


def _box(size, offset_c, half_w, norm) -> tuple[int, int, int, int]:
    r0, c0, r1, c1 = norm
    return (
        int(r0 * size),
        offset_c + int(c0 * half_w),
        int(r1 * size),
        offset_c + int(c1 * half_w),
    )


def _smooth_field(rng, shape, scale: int, lo: float, hi: float) -> np.ndarray:
    """Random field in [lo, hi] varying over roughly `scale` cells."""
    coarse_shape = (shape[0] // scale + 2, shape[1] // scale + 2)
    coarse = rng.random(coarse_shape)
    rows = np.linspace(0, coarse_shape[0] - 1, shape[0])
    cols = np.linspace(0, coarse_shape[1] - 1, shape[1])
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r1 = np.minimum(r0 + 1, coarse_shape[0] - 1)
    c1 = np.minimum(c0 + 1, coarse_shape[1] - 1)
    tr = (rows - r0)[:, None]
    tc = (cols - c0)[None, :]
    top = coarse[r0][:, c0] * (1 - tc) + coarse[r0][:, c1] * tc
    bottom = coarse[r1][:, c0] * (1 - tc) + coarse[r1][:, c1] * tc
    return lo + (hi - lo) * (top * (1 - tr) + bottom * tr)


def _paint_cluster(bar, height, regions, prefix, size, offset_c, half_w, rng):
    def footprint(name):
        r0, c0, r1, c1 = regions[f"{prefix}_{name}"]
        return slice(r0, r1), slice(c0, c1)

    # fields: scattered farmhouses too small to register as built blocks
    farm_r = rng.integers(0, size, size=size // 6)
    farm_c = rng.integers(offset_c, offset_c + half_w, size=size // 6)
    bar[farm_r, farm_c] = 0.04
    height[farm_r, farm_c] = 4.0

    # suburbs: density varies smoothly across neighborhoods with a mild house
    # texture on top, so class boundaries form coherent bands, not speckle
    rs, cs = footprint("suburbs")
    shape = bar[rs, cs].shape
    base = _smooth_field(rng, shape, 18, 0.13, 0.27)
    texture = 0.03 * (rng.random(shape) - 0.5)
    bar[rs, cs] = np.clip(base + texture, 0.02, 0.4)
    height[rs, cs] = 4.5 + 2.0 * rng.random(shape)

    rs, cs = footprint("fringe")
    edge = np.zeros_like(bar, dtype=bool)
    edge[rs, cs] = True
    inner_rs, inner_cs = footprint("suburbs")
    edge[inner_rs, inner_cs] = False
    fringe_base = _smooth_field(rng, bar.shape, 14, 0.02, 0.10)
    scatter = (rng.random(bar.shape) < 0.12) & edge
    bar[edge] = fringe_base[edge]
    bar[scatter] += 0.15
    height[edge] = 3.0
    height[scatter] = 4.0

    # industry: same footprint density as the CBD but low -- separable only
    # by context (periphery slab vs center blob), not by local reflectance
    rs, cs = footprint("industry")
    shape = bar[rs, cs].shape
    bar[rs, cs] = _smooth_field(rng, shape, 12, 0.42, 0.62)
    height[rs, cs] = 7.0 + 1.0 * rng.random(shape)

    # towers: regular lattice of tall blocks on green space; block means stay
    # in the open band while the dot texture marks the district
    rs, cs = footprint("towers")
    shape = bar[rs, cs].shape
    grid_r, grid_c = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
    dots = (grid_r % 2 == 0) & (grid_c % 2 == 0)
    bar[rs, cs] = np.where(dots, 0.60, 0.08)
    height[rs, cs] = np.where(dots, 24.0 + 6.0 * rng.random(shape), 0.0)

    rs, cs = footprint("cbd")
    shape = bar[rs, cs].shape
    bar[rs, cs] = _smooth_field(rng, shape, 12, 0.42, 0.62)
    height[rs, cs] = 16.0 + 10.0 * rng.random(shape)


def default_script(years: list[int], scenario_regions: dict) -> list[GrowthAction]:
    """A growth storyline touching every action type after the first year."""
    script = []
    if len(years) < 2:
        return script
    cycle = [
        ("west_suburbs", "infill"),
        ("east_towers", "highrise"),
        ("west_fringe", "sprawl"),
        ("east_suburbs", "infill"),
        ("west_towers", "highrise"),
        ("east_industry", "demolish"),
    ]
    for i, year in enumerate(years[1:]):
        region, action = cycle[i % len(cycle)]
        if region in scenario_regions:
            script.append(GrowthAction(year, region, action))
    return script


def generate_city_timeline(
    seed: int,
    years,
    size: int,
    drift: dict[int, np.ndarray] | None = None,
    script: list[GrowthAction] | None = None,
) -> CityScenario:
    """Deterministic scenario with two city clusters (west and east halves)."""
    years = list(years)
    if size < 96:
        raise ValueError(f"size must be >= 96 cells, got {size}")
    if not years:
        raise ValueError("at least one year required")
    rng = np.random.default_rng(seed)
    half_w = size // 2
    regions: dict[str, tuple[int, int, int, int]] = {}
    for prefix, offset in (("west", 0), ("east", size - half_w)):
        for name, norm in _CLUSTER_BOXES.items():
            regions[f"{prefix}_{name}"] = _box(size, offset, half_w, norm)
    bar = np.zeros((size, size))
    height = np.zeros((size, size))
    _paint_cluster(bar, height, regions, "west", size, 0, half_w, rng)
    _paint_cluster(bar, height, regions, "east", size, size - half_w, half_w, rng)
    bar = np.clip(bar, 0.0, 1.0)
    height = np.maximum(height, 0.0)

    scenario = CityScenario(
        seed=seed,
        size=size,
        years=years,
        bar_grids={years[0]: bar},
        height_grids={years[0]: height},
        regions=regions,
        script=[],
        drift={y: np.ones(6) for y in years},
    )
    scenario.script = default_script(years, regions) if script is None else list(script)
    by_year: dict[int, list[GrowthAction]] = {}
    for action in scenario.script:
        if action.region not in regions:
            raise ValueError(f"growth action references unknown region {action.region!r}")
        by_year.setdefault(action.year, []).append(action)
    for prev, year in zip(years, years[1:]):
        b = scenario.bar_grids[prev].copy()
        h = scenario.height_grids[prev].copy()
        for action in by_year.get(year, []):
            mask = scenario.region_mask(action.region)
            _apply_action(action.action, b, h, mask,
                          np.random.default_rng((seed, year, zlib.crc32(action.region.encode()))))
        scenario.bar_grids[year] = b
        scenario.height_grids[year] = h
    if drift:
        for year, bias in drift.items():
            scenario.drift[year] = np.asarray(bias, dtype=np.float64)
    return scenario


def _apply_action(action, bar, height, mask, rng):
    if action == "infill":
        bar[mask] = np.clip(bar[mask] * 1.3 + 0.02, 0.0, 0.95)
    elif action == "highrise":
        built = mask & (bar > 0.02)
        height[built] = height[built] * 1.3 + 2.0
    elif action == "sprawl":
        empty = mask & (bar < 0.02)
        idx = np.nonzero(empty)
        if idx[0].size:
            pick = rng.random(idx[0].size) < 0.25
            bar[idx[0][pick], idx[1][pick]] = 0.30
            height[idx[0][pick], idx[1][pick]] = 4.0
    elif action == "demolish":
        bar[mask] *= 0.5
        height[mask] *= 0.5
    else:
        raise ValueError(f"unknown growth action {action!r}")


def render_reflectance(
    scenario: CityScenario,
    year: int,
    noise_std: float = 0.0,
    qa_dropout: float = 0.0,
    n_observations: int = 6,
) -> ObservationStack:
    """Dated observations for one year: mixed spectrum, drift, noise, clouds."""
    if year not in scenario.bar_grids:
        raise ValueError(f"year {year} not in the scenario timeline")
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    if not 0 <= qa_dropout < 1:
        raise ValueError("qa_dropout must be in [0, 1)")
    bar = scenario.bar_grids[year]
    drift = scenario.drift.get(year, np.ones(6))
    base = (
        bar[None] * BUILT_SPECTRUM[:, None, None]
        + (1.0 - bar[None]) * VEGETATION_SPECTRUM[:, None, None]
    ) * drift[:, None, None]
    observations = []
    for k in range(n_observations):
        rng = np.random.default_rng((scenario.seed, year, k))
        data = base.copy()
        if noise_std > 0:
            data = data + rng.normal(0.0, noise_std, size=base.shape)
        qa = rng.random(bar.shape) >= qa_dropout
        date = dt.date(year, 5, 10) + dt.timedelta(days=18 * k)
        raster = MultiBandRaster(
            width=scenario.size,
            height=scenario.size,
            bands=6,
            band_names=list(BAND_NAMES),
            data=data,
        )
        observations.append(Observation(date=date, raster=raster, qa=qa))
    return ObservationStack(observations)


def save_scenario(scenario: CityScenario, directory) -> None:
    """Persist grids as DMR1 plus script and region CSVs."""
    from pathlib import Path

    from .raster import write_raster

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for year in scenario.years:
        write_raster(scenario.bar_raster(year), directory / f"bar_{year}.dmr")
        write_raster(scenario.height_raster(year), directory / f"height_{year}.dmr")
    with open(directory / "script.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["year", "region", "action"])
        for a in scenario.script:
            writer.writerow([a.year, a.region, a.action])
    with open(directory / "regions.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["region", "row0", "col0", "row1", "col1"])
        for name, (r0, c0, r1, c1) in scenario.regions.items():
            writer.writerow([name, r0, c0, r1, c1])
