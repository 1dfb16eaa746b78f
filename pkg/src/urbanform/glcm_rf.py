"""Texture-based random-forest baseline.

Per cell, 38 features: five window statistics (max, min, mean, median,
population std) for each of the six bands, plus eight gray-level
co-occurrence features computed on the first principal component of the
bands (mean, variance, homogeneity, contrast, dissimilarity, entropy,
second moment, correlation).  The forest is grown from scratch: bootstrap
per tree, Gini splits over a random feature subset per node, trees grown
to purity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .raster import MultiBandRaster

SPECTRAL_STATS = ("max", "min", "mean", "median", "std")
GLCM_FEATURES = (
    "glcm_mean",
    "glcm_variance",
    "glcm_homogeneity",
    "glcm_contrast",
    "glcm_dissimilarity",
    "glcm_entropy",
    "glcm_second_moment",
    "glcm_correlation",
)

# Distance-1 offsets for 0, 45, 90 and 135 degrees.
GLCM_DIRECTIONS = ((0, 1), (-1, 1), (-1, 0), (-1, -1))


def feature_names(band_names) -> list[str]:
    names = [f"{b}_{s}" for b in band_names for s in SPECTRAL_STATS]
    names.extend(GLCM_FEATURES)
    return names


def _window_slice(height, width, cell, window):
    if window % 2 == 0 or window < 1:
        raise ValueError(f"window must be odd and positive, got {window}")
    r, c = cell
    if not (0 <= r < height and 0 <= c < width):
        raise ValueError(f"cell {cell} out of bounds")
    h = window // 2
    return slice(max(0, r - h), min(height, r + h + 1)), slice(
        max(0, c - h), min(width, c + h + 1)
    )


def _median(sorted_vals: np.ndarray) -> float:
    n = sorted_vals.size
    return 0.5 * (sorted_vals[(n - 1) // 2] + sorted_vals[n // 2])


def spectral_stats(composite: MultiBandRaster, cell, window: int = 5) -> np.ndarray:
    """max, min, mean, median, population std per band over the window."""
    rs, cs = _window_slice(composite.height, composite.width, cell, window)
    out = np.empty(composite.bands * 5)
    for b in range(composite.bands):
        vals = composite.data[b, rs, cs].ravel()
        vals = vals[np.isfinite(vals)]
        if vals.size == 0:
            raise ValueError(f"band {composite.band_names[b]!r} all-NaN at {cell}")
        vals = np.sort(vals)
        out[5 * b : 5 * b + 5] = (
            vals[-1],
            vals[0],
            vals.mean(),
            _median(vals),
            vals.std(),
        )
    return out


def pca_first_component(composite: MultiBandRaster) -> MultiBandRaster:
    """Project band vectors onto the leading eigenvector of the band covariance.

    The covariance uses cells finite in every band, mean-centered.  The sign
    is fixed so the largest-magnitude loading is positive; cells with any
    missing band project to NaN.
    """
    flat = composite.data.reshape(composite.bands, -1)
    finite = np.all(np.isfinite(flat), axis=0)
    if finite.sum() < 2:
        raise ValueError("PCA requires at least two fully finite cells")
    x = flat[:, finite]
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    cov = centered @ centered.T / centered.shape[1]
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals[-1] <= 1e-15:
        raise ValueError("degenerate input: zero variance in every band")
    lead = eigvecs[:, -1]
    if lead[np.argmax(np.abs(lead))] < 0:
        lead = -lead
    proj = np.full(flat.shape[1], np.nan)
    proj[finite] = lead @ (flat[:, finite] - mean)
    return composite.copy_with(proj.reshape(1, composite.height, composite.width), ["pc1"])


def glcm_matrix(
    pc1: MultiBandRaster,
    cell,
    window: int = 5,
    levels: int = 32,
    directions=GLCM_DIRECTIONS,
) -> np.ndarray:
    """Symmetric, normalized co-occurrence matrix of the quantized window.

    Samples are quantized to equal-width bins over the window's min-max
    range; co-occurrences are accumulated at distance 1 over the given
    directions, both orientations.
    """
    if levels < 2:
        raise ValueError("levels must be >= 2")
    rs, cs = _window_slice(pc1.height, pc1.width, cell, window)
    win = pc1.data[0, rs, cs]
    finite = np.isfinite(win)
    if finite.sum() < 2:
        raise ValueError(f"window at {cell} has fewer than 2 samples")
    lo, hi = np.nanmin(win), np.nanmax(win)
    filled = np.where(finite, win, lo)
    if hi > lo:
        q = np.minimum(((filled - lo) / (hi - lo) * levels).astype(np.int64), levels - 1)
    else:
        q = np.zeros(win.shape, dtype=np.int64)
    counts = np.zeros((levels, levels))
    h, w = win.shape
    for dr, dc in directions:
        r0, r1 = max(0, -dr), min(h, h - dr)
        c0, c1 = max(0, -dc), min(w, w - dc)
        a = q[r0:r1, c0:c1]
        b = q[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        ok = finite[r0:r1, c0:c1] & finite[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        pair = a[ok] * levels + b[ok]
        binned = np.bincount(pair, minlength=levels * levels).reshape(levels, levels)
        counts += binned
        counts += binned.T
    total = counts.sum()
    if total == 0:
        raise ValueError(f"window at {cell} has no co-occurring sample pairs")
    return counts / total


def glcm_features(
    pc1: MultiBandRaster,
    cell,
    window: int = 5,
    levels: int = 32,
    directions=GLCM_DIRECTIONS,
) -> np.ndarray:
    """The eight Haralick-style statistics of the window's GLCM."""
    p = glcm_matrix(pc1, cell, window, levels, directions)
    idx = np.arange(p.shape[0], dtype=np.float64)
    diff = idx[:, None] - idx[None, :]
    marginal = p.sum(axis=1)
    mean = float(idx @ marginal)
    var = float(((idx - mean) ** 2) @ marginal)
    homogeneity = float((p / (1.0 + diff**2)).sum())
    contrast = float((p * diff**2).sum())
    dissimilarity = float((p * np.abs(diff)).sum())
    nz = p[p > 0]
    entropy = float(-(nz * np.log(nz)).sum())
    second_moment = float((p * p).sum())
    if var > 0:
        centered = idx - mean
        correlation = float(centered @ p @ centered / var)
    else:
        correlation = 1.0  # constant window: perfectly correlated by convention
    return np.array(
        [mean, var, homogeneity, contrast, dissimilarity, entropy, second_moment, correlation]
    )


def features_for_cell(
    composite: MultiBandRaster,
    pc1: MultiBandRaster,
    cell,
    window: int = 5,
    levels: int = 32,
) -> np.ndarray:
    return np.concatenate(
        [spectral_stats(composite, cell, window), glcm_features(pc1, cell, window, levels)]
    )


def features_for_cells(
    composite: MultiBandRaster,
    cells,
    window: int = 5,
    levels: int = 32,
    pc1: MultiBandRaster | None = None,
) -> np.ndarray:
    """Feature matrix (n_cells, 5*bands + 8); PC1 computed once if not given."""
    if pc1 is None:
        pc1 = pca_first_component(composite)
    return np.stack(
        [features_for_cell(composite, pc1, cell, window, levels) for cell in cells]
    )


# ---------------------------------------------------------------------------
# Random forest
# ---------------------------------------------------------------------------

_LEAF = -1


@dataclass
class DecisionTree:
    feature: np.ndarray    # int32, _LEAF at leaves
    threshold: np.ndarray  # float64
    left: np.ndarray       # int32, self-loop at leaves
    right: np.ndarray      # int32
    histogram: np.ndarray  # (nodes, n_classes) int64, populated at leaves

    def predict_class(self, x: np.ndarray) -> np.ndarray:
        """Vectorized level-synchronous traversal; returns class codes."""
        node = np.zeros(x.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[node]
            active = feat != _LEAF
            if not active.any():
                break
            go_right = np.zeros(x.shape[0], dtype=bool)
            go_right[active] = x[active, feat[active]] >= self.threshold[node[active]]
            node = np.where(active, np.where(go_right, self.right[node], self.left[node]), node)
        return np.argmax(self.histogram[node], axis=1)


@dataclass
class ForestModel:
    trees: list[DecisionTree]
    n_classes: int
    n_features: int
    features_per_split: int
    seed: int
    oob_indices: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def _gini_best_split(values: np.ndarray, labels: np.ndarray, n_classes: int):
    """Best threshold on one feature by weighted Gini; None when constant."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    y = labels[order]
    distinct = np.nonzero(v[1:] > v[:-1])[0]
    if distinct.size == 0:
        return None
    n = v.size
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    left_counts = np.cumsum(onehot, axis=0)[distinct]
    total = onehot.sum(axis=0)
    right_counts = total[None, :] - left_counts
    n_left = distinct + 1.0
    n_right = n - n_left
    gini_left = 1.0 - ((left_counts / n_left[:, None]) ** 2).sum(axis=1)
    gini_right = 1.0 - ((right_counts / n_right[:, None]) ** 2).sum(axis=1)
    score = (n_left * gini_left + n_right * gini_right) / n
    best = int(np.argmin(score))
    threshold = 0.5 * (v[distinct[best]] + v[distinct[best] + 1])
    return float(score[best]), threshold


def _grow_tree(
    x: np.ndarray, y: np.ndarray, n_classes: int, features_per_split: int, rng
) -> DecisionTree:
    feature, threshold, left, right, hist = [], [], [], [], []

    def new_node():
        feature.append(_LEAF)
        threshold.append(0.0)
        left.append(0)
        right.append(0)
        hist.append(np.zeros(n_classes, dtype=np.int64))
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(x.shape[0]))]
    while stack:
        node, idx = stack.pop()
        counts = np.bincount(y[idx], minlength=n_classes)
        hist[node] = counts
        if np.count_nonzero(counts) <= 1:
            continue  # pure leaf
        candidates = rng.choice(x.shape[1], size=features_per_split, replace=False)
        best = None
        for f in candidates:
            found = _gini_best_split(x[idx, f], y[idx], n_classes)
            if found is None:
                continue
            score, thr = found
            if best is None or score < best[0]:
                best = (score, int(f), thr)
        if best is None:
            continue  # constant features: leaf with mixed histogram
        _, f, thr = best
        go_left = x[idx, f] < thr
        feature[node] = f
        threshold[node] = thr
        node_left, node_right = new_node(), new_node()
        left[node], right[node] = node_left, node_right
        # Right child pushed first so the left subtree is grown first.
        stack.append((node_right, idx[~go_left]))
        stack.append((node_left, idx[go_left]))
    return DecisionTree(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        histogram=np.stack(hist),
    )


def rf_train(
    features: np.ndarray,
    labels: np.ndarray,
    n_trees: int = 200,
    features_per_split: int = 6,
    seed: int = 0,
) -> ForestModel:
    """Fit a forest of fully grown Gini trees on bootstrap samples.

    Each tree draws its own generator from (seed + tree index), so trees are
    independent and the forest is reproducible.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ValueError(f"features {x.shape} incompatible with {y.size} labels")
    if np.isnan(x).any():
        raise ValueError("NaN feature values are not allowed")
    n_classes = int(y.max()) + 1
    if np.unique(y).size < 2:
        raise ValueError("training requires at least two classes")
    features_per_split = min(features_per_split, x.shape[1])
    trees, oob = [], []
    n = x.shape[0]
    for t in range(n_trees):
        rng = np.random.default_rng(seed + t)
        sample = rng.integers(0, n, size=n)
        trees.append(_grow_tree(x[sample], y[sample], n_classes, features_per_split, rng))
        oob.append(np.setdiff1d(np.arange(n), sample))
    return ForestModel(
        trees=trees,
        n_classes=n_classes,
        n_features=x.shape[1],
        features_per_split=features_per_split,
        seed=seed,
        oob_indices=oob,
    )


def rf_predict_batch(model: ForestModel, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(class codes, per-class vote fractions) for a feature matrix."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {x.shape[1]}")
    votes = np.zeros((x.shape[0], model.n_classes))
    for tree in model.trees:
        votes[np.arange(x.shape[0]), tree.predict_class(x)] += 1.0
    fractions = votes / model.n_trees
    return np.argmax(fractions, axis=1), fractions


def rf_predict(model: ForestModel, feature_vector: np.ndarray) -> tuple[int, np.ndarray]:
    """Majority vote over trees; ties resolve to the lower class code."""
    classes, fractions = rf_predict_batch(model, np.asarray(feature_vector)[None, :])
    return int(classes[0]), fractions[0]


def oob_accuracy(model: ForestModel, features: np.ndarray, labels: np.ndarray) -> float:
    """Out-of-bag accuracy over samples covered by at least one tree."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    votes = np.zeros((x.shape[0], model.n_classes))
    for tree, oob in zip(model.trees, model.oob_indices):
        if oob.size:
            votes[oob, tree.predict_class(x[oob])] += 1.0
    covered = votes.sum(axis=1) > 0
    pred = np.argmax(votes[covered], axis=1)
    return float(np.mean(pred == y[covered]))


def save_forest(model: ForestModel, path) -> None:
    """One text line per node: tree id, node id, then split or leaf fields."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"forest n_trees={model.n_trees} n_classes={model.n_classes} "
            f"n_features={model.n_features} features_per_split={model.features_per_split} "
            f"seed={model.seed}\n"
        )
        for t, tree in enumerate(model.trees):
            for i in range(tree.feature.size):
                if tree.feature[i] == _LEAF:
                    counts = " ".join(str(int(c)) for c in tree.histogram[i])
                    fh.write(f"{t} {i} leaf {counts}\n")
                else:
                    fh.write(
                        f"{t} {i} split {tree.feature[i]} {float(tree.threshold[i])!r} "
                        f"{tree.left[i]} {tree.right[i]}\n"
                    )


def load_forest(path) -> ForestModel:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if not header or header[0] != "forest":
            raise ValueError(f"{path}: not a forest file")
        meta = dict(kv.split("=") for kv in header[1:])
        n_trees = int(meta["n_trees"])
        n_classes = int(meta["n_classes"])
        nodes: list[dict[int, tuple]] = [dict() for _ in range(n_trees)]
        for line in fh:
            parts = line.split()
            t, i, kind = int(parts[0]), int(parts[1]), parts[2]
            nodes[t][i] = (kind, parts[3:])
    trees = []
    for tree_nodes in nodes:
        size = len(tree_nodes)
        feature = np.full(size, _LEAF, dtype=np.int32)
        threshold = np.zeros(size)
        left = np.zeros(size, dtype=np.int32)
        right = np.zeros(size, dtype=np.int32)
        hist = np.zeros((size, n_classes), dtype=np.int64)
        for i, (kind, rest) in tree_nodes.items():
            if kind == "leaf":
                hist[i] = [int(v) for v in rest]
            else:
                feature[i] = int(rest[0])
                threshold[i] = float(rest[1])
                left[i] = int(rest[2])
                right[i] = int(rest[3])
        trees.append(DecisionTree(feature, threshold, left, right, hist))
    return ForestModel(
        trees=trees,
        n_classes=n_classes,
        n_features=int(meta["n_features"]),
        features_per_split=int(meta["features_per_split"]),
        seed=int(meta["seed"]),
    )
