"""The segmentation stack: autograd tensors, gradient checks, training.

Everything runs on the package's own float64 autograd engine.  The gradient
check compares every backward pass against central differences; training
then overfits a handful of masked patches to show the optimization loop.
"""

import numpy as np

from urbanform import composite, labeler, sampler, synthcity
from urbanform.segnet import ModelConfig, predict_map, train_model
from urbanform.segnet.gradcheck import run_gradcheck

print("== gradient check (h = 1e-5, double precision) ==")
report = run_gradcheck("both", tolerance=1e-5, seed=0)
print(report.format())

print("== tiny training run ==")
scenario = synthcity.generate_city_timeline(seed=4, years=[2014], size=96)
stack = synthcity.render_reflectance(scenario, 2014, noise_std=0.02, qa_dropout=0.1)
comp = composite.rolling_median_composite(stack, 2014)
std = composite.standardize(comp, composite.compute_band_scales(comp, source_year=2014))
labels = labeler.label_grid(scenario.bar_raster(2014), scenario.height_raster(2014),
                            "vertical", 2014)
sites = sampler.balance_classes(
    sampler.thin_by_distance(sampler.sites_from_grid(labels), seed=1), seed=2)
dataset = sampler.extract_patches(std, labels, sites, patch_size=48, step=24)
print(f"{len(dataset.patches)} patches, supervised cells only where sites exist")

config = ModelConfig(architecture="fcn", n_classes=3, patch_size=48,
                     learning_rate=0.002, epochs=6, batch_size=8, seed=5)
params, logs = train_model(config, dataset, dataset)
for log in logs:
    print(f"  epoch {log.epoch}: loss {log.loss:.4f}  "
          f"masked OA {log.val_oa:.3f}  avg F1 {log.val_avg_f1:.3f}")

grid, probs = predict_map(config, params, std, step=24)
agree = grid.labels == labels.labels
print(f"full-map prediction agrees with reference on "
      f"{agree.mean() * 100:.1f}% of cells "
      f"(probabilities sum to {np.nansum(probs.data, axis=0).max():.6f})")
