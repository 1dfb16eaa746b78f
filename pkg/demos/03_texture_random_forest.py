"""The texture baseline: 38 features per cell into a from-scratch forest.

Thirty window statistics (max, min, mean, median, std for six bands) plus
eight co-occurrence features on the first principal component feed a
200-tree Gini forest.  Out-of-bag accuracy gives an unbiased training-side
estimate.
"""

import numpy as np

from urbanform import composite, glcm_rf, labeler, sampler, synthcity

scenario = synthcity.generate_city_timeline(seed=3, years=[2014], size=128)
stack = synthcity.render_reflectance(scenario, 2014, noise_std=0.03, qa_dropout=0.2)
comp = composite.rolling_median_composite(stack, 2014)
std = composite.standardize(comp, composite.compute_band_scales(comp, source_year=2014))

labels = labeler.label_grid(scenario.bar_raster(2014), scenario.height_raster(2014),
                            "horizontal", 2014)
sites = sampler.balance_classes(
    sampler.thin_by_distance(sampler.sites_from_grid(labels), 150.0, seed=1), 5.0, seed=2)
split = len(sites) * 2 // 3
train_sites, test_sites = sites[:split], sites[split:]
print(f"{len(train_sites)} training sites, {len(test_sites)} held out")

pc1 = glcm_rf.pca_first_component(std)
print("feature names:", ", ".join(glcm_rf.feature_names(std.band_names)[:6]), "...")

x_train = glcm_rf.features_for_cells(std, [(s.row, s.col) for s in train_sites], pc1=pc1)
y_train = np.array([s.label for s in train_sites])
forest = glcm_rf.rf_train(x_train, y_train, n_trees=200, features_per_split=6, seed=4)
print(f"forest: {forest.n_trees} trees, OOB accuracy "
      f"{glcm_rf.oob_accuracy(forest, x_train, y_train):.3f}")

x_test = glcm_rf.features_for_cells(std, [(s.row, s.col) for s in test_sites], pc1=pc1)
y_test = np.array([s.label for s in test_sites])
pred, fractions = glcm_rf.rf_predict_batch(forest, x_test)
print(f"held-out accuracy {np.mean(pred == y_test):.3f}; "
      f"vote fractions sum to {fractions.sum(axis=1).max():.6f}")

# one cell end to end
cell = (test_sites[0].row, test_sites[0].col)
vec = glcm_rf.features_for_cell(std, pc1, cell)
cls, votes = glcm_rf.rf_predict(forest, vec)
print(f"cell {cell}: predicted {labeler.HORIZONTAL_CLASSES[cls]} "
      f"with vote fraction {votes[cls]:.2f}")
