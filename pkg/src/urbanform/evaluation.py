"""Accuracy, significance, transferability and area-trend computations.

The confusion matrix (rows = map, columns = reference) is the root of every
reported metric: overall accuracy, kappa, per-class user's and producer's
accuracy, F1 and average F1, each with a normal-approximation 95% CI
half-width on its own denominator.  Model pairs are compared with McNemar's
test on discordant correctness counts, reported both with and without
continuity correction.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .labeler import HORIZONTAL, VERTICAL, UNLABELED, DensityLabelGrid, class_names

Z_95 = 1.96

COMBINED_CLASSES = [
    "compact_high",
    "compact_low",
    "open_high",
    "open_low",
    "sparse_high",
    "sparse_low",
    "not_built",
]


@dataclass
class ConfusionMatrix:
    classes: list[str]
    counts: np.ndarray  # (n, n) int64, rows = prediction, cols = reference

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        n = len(self.classes)
        if self.counts.shape != (n, n):
            raise ValueError(f"counts shape {self.counts.shape} != ({n}, {n})")
        if (self.counts < 0).any():
            raise ValueError("negative counts")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class MetricsReport:
    classes: list[str]
    overall_accuracy: float
    overall_ci: float
    kappa: float
    users_accuracy: dict[str, float]
    users_ci: dict[str, float]
    producers_accuracy: dict[str, float]
    producers_ci: dict[str, float]
    f1: dict[str, float]
    average_f1: float

    def rows(self):
        """Long-format (metric, class, value, ci) rows for CSV output."""
        out = [
            ("overall_accuracy", "", self.overall_accuracy, self.overall_ci),
            ("kappa", "", self.kappa, ""),
            ("average_f1", "", self.average_f1, ""),
        ]
        for c in self.classes:
            if c in self.users_accuracy:
                out.append(("users_accuracy", c, self.users_accuracy[c], self.users_ci[c]))
            if c in self.producers_accuracy:
                out.append(
                    ("producers_accuracy", c, self.producers_accuracy[c], self.producers_ci[c])
                )
            if c in self.f1:
                out.append(("f1", c, self.f1[c], ""))
        return out


def confusion_matrix(predictions, references, classes: list[str]) -> ConfusionMatrix:
    """Count (prediction, reference) pairs; unlabeled (< 0) cells are excluded."""
    pred = np.asarray(predictions).ravel()
    ref = np.asarray(references).ravel()
    if pred.size != ref.size:
        raise ValueError(f"length mismatch: {pred.size} predictions, {ref.size} references")
    keep = (pred >= 0) & (ref >= 0)
    pred, ref = pred[keep], ref[keep]
    if pred.size == 0:
        raise ValueError("no cells where both prediction and reference are labeled")
    n = len(classes)
    if pred.max() >= n or ref.max() >= n:
        raise ValueError(f"label code outside the {n}-class set")
    counts = np.bincount(pred * n + ref, minlength=n * n).reshape(n, n)
    return ConfusionMatrix(list(classes), counts)


def _wald_ci(p: float, n: float) -> float:
    return Z_95 * math.sqrt(p * (1.0 - p) / n) if n > 0 else float("nan")


def summary_metrics(matrix: ConfusionMatrix) -> MetricsReport:
    """All headline metrics of a confusion matrix.

    Classes with an empty row (column) have undefined user's (producer's)
    accuracy; they are excluded from the average F1 with a warning.
    """
    counts = matrix.counts.astype(np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValueError("empty confusion matrix")
    diag = np.diag(counts)
    rows = counts.sum(axis=1)
    cols = counts.sum(axis=0)
    oa = float(diag.sum() / total)
    p_e = float((rows * cols).sum() / total**2)
    kappa = (oa - p_e) / (1.0 - p_e) if p_e < 1.0 else 1.0
    ua, ua_ci, pa, pa_ci, f1 = {}, {}, {}, {}, {}
    for i, name in enumerate(matrix.classes):
        if rows[i] > 0:
            ua[name] = float(diag[i] / rows[i])
            ua_ci[name] = _wald_ci(ua[name], rows[i])
        if cols[i] > 0:
            pa[name] = float(diag[i] / cols[i])
            pa_ci[name] = _wald_ci(pa[name], cols[i])
        if rows[i] > 0 and cols[i] > 0 and (ua[name] + pa[name]) > 0:
            f1[name] = 2.0 * ua[name] * pa[name] / (ua[name] + pa[name])
        elif rows[i] > 0 and cols[i] > 0:
            f1[name] = 0.0
    skipped = [c for c in matrix.classes if c not in f1]
    if skipped:
        warnings.warn(
            f"classes {skipped} have an empty row or column; "
            "their rates are undefined and excluded from the average F1"
        )
    return MetricsReport(
        classes=list(matrix.classes),
        overall_accuracy=oa,
        overall_ci=_wald_ci(oa, total),
        kappa=float(kappa),
        users_accuracy=ua,
        users_ci=ua_ci,
        producers_accuracy=pa,
        producers_ci=pa_ci,
        f1=f1,
        average_f1=float(np.mean(list(f1.values()))) if f1 else float("nan"),
    )


def chi2_sf_1df(x: float) -> float:
    """Survival function of the chi-square distribution with 1 dof.

    Equals erfc(sqrt(x/2)); the C library erfc evaluates the underlying
    series/continued-fraction expansions well below 1e-10 absolute error.
    """
    if x < 0:
        raise ValueError("chi-square statistic must be non-negative")
    return math.erfc(math.sqrt(0.5 * x))


@dataclass
class McNemarResult:
    chi2: float              # continuity-corrected statistic
    p_value: float
    chi2_uncorrected: float
    p_uncorrected: float
    b: int                   # A correct, B wrong
    c: int                   # A wrong, B correct


def mcnemar_test(matrix2x2) -> McNemarResult:
    """Paired test on a 2x2 correctness table.

    matrix2x2[i][j] counts cells where classifier A is (0: correct,
    1: wrong) and classifier B likewise; only the discordant counts b and c
    enter the statistic.
    """
    table = np.asarray(matrix2x2, dtype=np.int64)
    if table.shape != (2, 2):
        raise ValueError(f"need a 2x2 table, got {table.shape}")
    b, c = int(table[0, 1]), int(table[1, 0])
    if b + c == 0:
        raise ValueError("no discordant pairs (b + c = 0)")
    corrected = (abs(b - c) - 1.0) ** 2 / (b + c)
    uncorrected = (b - c) ** 2 / (b + c)
    if b == c:
        corrected = 0.0  # |b-c|-1 would go negative; no evidence either way
    return McNemarResult(
        chi2=corrected,
        p_value=chi2_sf_1df(corrected),
        chi2_uncorrected=uncorrected,
        p_uncorrected=chi2_sf_1df(uncorrected),
        b=b,
        c=c,
    )


def correctness_table(pred_a, pred_b, references) -> np.ndarray:
    """2x2 (A correct/incorrect x B correct/incorrect) over labeled cells."""
    a = np.asarray(pred_a).ravel()
    bb = np.asarray(pred_b).ravel()
    ref = np.asarray(references).ravel()
    keep = (a >= 0) & (bb >= 0) & (ref >= 0)
    a, bb, ref = a[keep], bb[keep], ref[keep]
    if a.size == 0:
        raise ValueError("no jointly labeled cells")
    a_ok = a == ref
    b_ok = bb == ref
    return np.array(
        [
            [int(np.sum(a_ok & b_ok)), int(np.sum(a_ok & ~b_ok))],
            [int(np.sum(~a_ok & b_ok)), int(np.sum(~a_ok & ~b_ok))],
        ],
        dtype=np.int64,
    )


def per_class_mcnemar(pred_a, pred_b, references, classes: list[str]) -> dict[str, McNemarResult]:
    """One-vs-rest McNemar per class: a prediction is 'correct' for class c
    when it agrees with the reference on membership of c."""
    a = np.asarray(pred_a).ravel()
    bb = np.asarray(pred_b).ravel()
    ref = np.asarray(references).ravel()
    keep = (a >= 0) & (bb >= 0) & (ref >= 0)
    a, bb, ref = a[keep], bb[keep], ref[keep]
    out = {}
    for code, name in enumerate(classes):
        a_ok = (a == code) == (ref == code)
        b_ok = (bb == code) == (ref == code)
        table = np.array(
            [
                [np.sum(a_ok & b_ok), np.sum(a_ok & ~b_ok)],
                [np.sum(~a_ok & b_ok), np.sum(~a_ok & ~b_ok)],
            ],
            dtype=np.int64,
        )
        if table[0, 1] + table[1, 0] == 0:
            continue
        out[name] = mcnemar_test(table)
    return out


@dataclass
class GrowthAccuracy:
    users_accuracy: float
    producers_accuracy: float
    f1: float
    tp: int
    fp: int
    fn: int


def evaluate_growth(pred_growth, ref_growth) -> GrowthAccuracy:
    """User's/producer's accuracy and F1 of the growth class."""
    pred = np.asarray(pred_growth).ravel()
    ref = np.asarray(ref_growth).ravel()
    if pred.size != ref.size:
        raise ValueError("prediction/reference length mismatch")
    tp = int(np.sum((pred == 1) & (ref == 1)))
    fp = int(np.sum((pred == 1) & (ref == 0)))
    fn = int(np.sum((pred == 0) & (ref == 1)))
    if tp + fn == 0:
        raise ValueError("no growth cells in the reference")
    if tp + fp == 0:
        raise ValueError("no predicted growth cells; user's accuracy undefined")
    ua = tp / (tp + fp)
    pa = tp / (tp + fn)
    f1 = 2 * ua * pa / (ua + pa) if ua + pa > 0 else 0.0
    return GrowthAccuracy(ua, pa, f1, tp, fp, fn)


def grid_overall_accuracy(pred: DensityLabelGrid, ref: DensityLabelGrid, cells=None) -> float:
    """OA of a predicted grid against a reference, optionally at given cells."""
    if pred.dimension != ref.dimension:
        raise ValueError("dimension mismatch")
    p, r = pred.labels, ref.labels
    if cells is not None:
        idx = np.asarray(cells)
        p = p[idx[:, 0], idx[:, 1]]
        r = r[idx[:, 0], idx[:, 1]]
    keep = (p != UNLABELED) & (r != UNLABELED)
    if not keep.any():
        raise ValueError("no jointly labeled cells")
    return float(np.mean(p[keep] == r[keep]))


def sample_size_sensitivity(
    train_dataset,
    fractions=(0.9, 0.7, 0.5, 0.3, 0.2),
    folds: int = 20,
    train_fn=None,
    seed: int = 0,
):
    """Mean and std of validation OA when training on random subsets.

    ``train_fn(patches, fold_seed) -> oa`` trains a fresh model on the given
    patch subset and returns its validation overall accuracy; this keeps the
    resampling protocol independent of the model family.
    """
    if train_fn is None:
        raise ValueError("train_fn is required")
    n = len(train_dataset.patches)
    results = {}
    for fraction in fractions:
        size = max(1, round(fraction * n))
        oas = []
        for fold in range(folds):
            rng = np.random.default_rng((seed, int(fraction * 1000), fold))
            idx = np.sort(rng.choice(n, size=size, replace=False))
            subset = [train_dataset.patches[i] for i in idx]
            oas.append(train_fn(subset, fold))
        results[fraction] = (float(np.mean(oas)), float(np.std(oas)))
    return results


def combine_dimensions(horizontal: DensityLabelGrid, vertical: DensityLabelGrid) -> np.ndarray:
    """Merge the two label grids into the 7-class urban-form code grid.

    Returns int16 codes indexing COMBINED_CLASSES; UNLABELED where either
    dimension is unlabeled.  A cell is not_built when either dimension says
    not_built.
    """
    if horizontal.dimension != HORIZONTAL or vertical.dimension != VERTICAL:
        raise ValueError("expected one horizontal and one vertical grid")
    if not horizontal.same_geometry(vertical):
        raise ValueError("geometry mismatch")
    h, v = horizontal.labels, vertical.labels
    out = np.full(h.shape, UNLABELED, dtype=np.int16)
    labeled = (h != UNLABELED) & (v != UNLABELED)
    not_built = labeled & ((h == 0) | (v == 0))
    out[not_built] = COMBINED_CLASSES.index("not_built")
    built = labeled & ~not_built
    # horizontal codes 1..3 = sparse, open, compact; vertical 1..2 = low, high
    names = {
        (3, 2): "compact_high",
        (3, 1): "compact_low",
        (2, 2): "open_high",
        (2, 1): "open_low",
        (1, 2): "sparse_high",
        (1, 1): "sparse_low",
    }
    for (hc, vc), name in names.items():
        out[built & (h == hc) & (v == vc)] = COMBINED_CLASSES.index(name)
    return out


def area_trends(
    annual_grids: dict[int, tuple[DensityLabelGrid, DensityLabelGrid]],
    region_masks: dict[str, np.ndarray],
    population: dict[tuple[str, int], float] | None = None,
) -> list[dict]:
    """Per-region, per-year class areas in hectares, long format.

    ``annual_grids`` maps year -> (horizontal grid, vertical grid).  Rows are
    emitted for each dimension and for the combined 7-class scheme; area is
    cell count times cell_size^2 / 10^4.  Region masks must be disjoint.
    """
    if not annual_grids:
        raise ValueError("no annual grids")
    names = list(region_masks)
    if len(set(names)) != len(names):
        raise ValueError("duplicate region keys")
    stacked = np.zeros_like(next(iter(region_masks.values())), dtype=np.int64)
    for mask in region_masks.values():
        stacked += mask.astype(np.int64)
    if (stacked > 1).any():
        raise ValueError("region masks overlap")
    rows = []
    for year in sorted(annual_grids):
        hgrid, vgrid = annual_grids[year]
        if not hgrid.same_geometry(vgrid):
            raise ValueError(f"geometry mismatch in year {year}")
        ha_per_cell = hgrid.cell_size**2 / 1e4
        combined = combine_dimensions(hgrid, vgrid)
        for region, mask in region_masks.items():
            if mask.shape != hgrid.labels.shape:
                raise ValueError(f"region {region!r} mask shape mismatch")
            if not mask.any():
                warnings.warn(f"region {region!r} covers zero cells")
            pop = population.get((region, year)) if population else None
            for dimension, grid_labels, classes in (
                (HORIZONTAL, hgrid.labels, class_names(HORIZONTAL)),
                (VERTICAL, vgrid.labels, class_names(VERTICAL)),
                ("combined", combined, COMBINED_CLASSES),
            ):
                for code, cname in enumerate(classes):
                    count = int(np.sum(mask & (grid_labels == code)))
                    row = {
                        "region": region,
                        "year": year,
                        "dimension": dimension,
                        "class": cname,
                        "hectares": count * ha_per_cell,
                    }
                    if pop is not None:
                        row["population"] = pop
                    rows.append(row)
    return rows


def write_metrics_csv(report: MetricsReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "class", "value", "ci_95_halfwidth"])
        for metric, cls, value, ci in report.rows():
            writer.writerow([metric, cls, repr(float(value)), repr(float(ci)) if ci != "" else ""])


def format_metrics_text(report: MetricsReport) -> str:
    lines = [
        f"overall accuracy: {report.overall_accuracy:.4f} (±{report.overall_ci:.4f})",
        f"kappa:            {report.kappa:.4f}",
        f"average F1:       {report.average_f1:.4f}",
    ]
    for c in report.classes:
        ua = report.users_accuracy.get(c)
        pa = report.producers_accuracy.get(c)
        f1 = report.f1.get(c)
        ua_s = f"{ua:.4f}±{report.users_ci[c]:.4f}" if ua is not None else "undef"
        pa_s = f"{pa:.4f}±{report.producers_ci[c]:.4f}" if pa is not None else "undef"
        f1_s = f"{f1:.4f}" if f1 is not None else "undef"
        lines.append(f"  {c:<14} UA {ua_s}  PA {pa_s}  F1 {f1_s}")
    return "\n".join(lines) + "\n"
