"""Density labeling from building-area ratio and height grids.

Each cell is labeled from its 5x5 block: horizontal classes by mean
footprint ratio (0.30 / 0.15 / 0.02), vertical classes by footprint-weighted
mean height (10 m) over built blocks.  Growth labels mark cells that moved
to a denser or higher class between epochs.
"""

import numpy as np

from urbanform import labeler, synthcity

scenario = synthcity.generate_city_timeline(
    seed=2, years=[2006, 2010, 2014], size=128,
    script=[
        synthcity.GrowthAction(2010, "west_suburbs", "infill"),
        synthcity.GrowthAction(2014, "west_suburbs", "highrise"),
    ],
)

grids = {}
for year in (2006, 2014):
    for dim in ("horizontal", "vertical"):
        grids[dim, year] = labeler.label_grid(
            scenario.bar_raster(year), scenario.height_raster(year), dim, year)

names = labeler.HORIZONTAL_CLASSES
counts = np.bincount(grids["horizontal", 2014].labels.ravel() + 1, minlength=5)[1:]
print("horizontal 2014 class counts:")
for name, count in zip(names, counts):
    print(f"  {name:>9}: {count}")

# single-cell inspection: the block aggregate behind a label
bar_r = scenario.bar_raster(2014)
h_r = scenario.height_raster(2014)
cell = (64, 32)
block_bar, mean_h = labeler.block_aggregate(bar_r, h_r, cell)
print(f"cell {cell}: block ratio {block_bar:.3f}, weighted mean height {mean_h:.1f} m "
      f"-> horizontal {names[labeler.classify_horizontal(block_bar)]}, "
      f"vertical {labeler.VERTICAL_CLASSES[labeler.classify_vertical(block_bar, mean_h)]}")

# growth between epochs: only positive categorical change counts
growth = labeler.derive_growth_labels(grids["vertical", 2006], grids["vertical", 2014])
suburbs = scenario.region_mask("west_suburbs")
grown = int((growth == labeler.GROWTH).sum())
print(f"vertical growth cells: {grown} total, "
      f"{int((growth[suburbs] == labeler.GROWTH).sum())} inside the scripted suburbs")
