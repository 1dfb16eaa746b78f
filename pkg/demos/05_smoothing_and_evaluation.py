"""Temporal smoothing and the accuracy toolkit.

A per-cell probability series is cleaned with a Savitzky-Golay filter
(window 5, quadratic); confusion-matrix metrics, McNemar comparison and
area trends summarize map quality the way assessment reports do.
"""

import numpy as np

from urbanform import evaluation, labeler
from urbanform.timeseries import ClassSeries, savgol_coefficients, smooth_class_series

print("== Savitzky-Golay ==")
print("weights(5,2) * 35 =", (savgol_coefficients(5, 2) * 35).round(6))

# a 12-year series with one abnormal year
years = list(range(2000, 2012))
probs = np.tile([0.8, 0.15, 0.05], (12, 1))
probs[6] = [0.1, 0.2, 0.7]  # single-year artifact
smoothed = smooth_class_series(ClassSeries(years, probs))
print("raw labels:     ", np.argmax(probs, axis=1))
print("smoothed labels:", np.r_[[-1, -1], smoothed.labels, [-1, -1]],
      "(edge years dropped)")

print("\n== accuracy metrics ==")
rng = np.random.default_rng(0)
ref = rng.integers(0, 4, 2000)
pred_a = np.where(rng.random(2000) < 0.85, ref, rng.integers(0, 4, 2000))
pred_b = np.where(rng.random(2000) < 0.72, ref, rng.integers(0, 4, 2000))
classes = labeler.HORIZONTAL_CLASSES
matrix = evaluation.confusion_matrix(pred_a, ref, classes)
report = evaluation.summary_metrics(matrix)
print(evaluation.format_metrics_text(report))

table = evaluation.correctness_table(pred_a, pred_b, ref)
mc = evaluation.mcnemar_test(table)
print(f"McNemar: corrected chi2 {mc.chi2:.2f} (p {mc.p_value:.2e}), "
      f"discordant b={mc.b} c={mc.c}")

print("\n== area trends ==")
h = labeler.DensityLabelGrid(width=40, height=40, dimension="horizontal",
                             epoch=2014, labels=rng.integers(0, 4, (40, 40)))
v = labeler.DensityLabelGrid(width=40, height=40, dimension="vertical",
                             epoch=2014, labels=rng.integers(0, 3, (40, 40)))
west = np.zeros((40, 40), bool)
west[:, :20] = True
rows = evaluation.area_trends({2014: (h, v)},
                              {"west": west, "east": ~west})
combined = [r for r in rows if r["dimension"] == "combined" and r["region"] == "west"]
for row in combined:
    print(f"  west {row['class']:>12}: {row['hectares']:7.2f} ha")
