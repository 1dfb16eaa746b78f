import numpy as np
import pytest

from urbanform.glcm_rf import (
    feature_names,
    features_for_cell,
    glcm_features,
    glcm_matrix,
    load_forest,
    oob_accuracy,
    pca_first_component,
    rf_predict,
    rf_predict_batch,
    rf_train,
    save_forest,
    spectral_stats,
)
from urbanform.raster import MultiBandRaster


def raster(values):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 2:
        values = values[None]
    return MultiBandRaster(width=values.shape[2], height=values.shape[1],
                           bands=values.shape[0],
                           band_names=[f"b{i}" for i in range(values.shape[0])],
                           data=values)


class TestSpectralStats:
    def test_constant_window(self):
        r = raster(np.full((5, 5), 0.3))
        out = spectral_stats(r, (2, 2))
        assert np.allclose(out, [0.3, 0.3, 0.3, 0.3, 0.0])

    def test_median_of_1_to_25(self):
        r = raster(np.arange(1.0, 26.0).reshape(5, 5))
        out = spectral_stats(r, (2, 2))
        assert out[3] == 13.0  # median
        assert out[0] == 25.0 and out[1] == 1.0

    def test_six_bands_give_30_values(self):
        rng = np.random.default_rng(0)
        r = raster(rng.random((6, 7, 7)))
        assert spectral_stats(r, (3, 3)).size == 30
        assert len(feature_names(r.band_names)) == 38

    def test_population_std(self):
        vals = np.array([[1.0, 3.0]])
        r = raster(np.vstack([vals, vals])[None, :, :].reshape(1, 2, 2))
        out = spectral_stats(r, (0, 0), window=3)
        assert out[4] == pytest.approx(1.0)  # population std of {1,3,1,3}

    def test_all_nan_window_rejected(self):
        r = raster(np.full((3, 3), np.nan))
        with pytest.raises(ValueError, match="all-NaN"):
            spectral_stats(r, (1, 1))

    def test_sort_oracle_random(self):
        rng = np.random.default_rng(3)
        r = raster(rng.random((2, 9, 9)))
        out = spectral_stats(r, (4, 4), window=5)
        win = r.data[:, 2:7, 2:7].reshape(2, -1)
        for b in range(2):
            v = np.sort(win[b])
            assert out[5 * b + 0] == v[-1]
            assert out[5 * b + 1] == v[0]
            assert out[5 * b + 2] == pytest.approx(v.mean())
            assert out[5 * b + 3] == pytest.approx(np.median(v))
            assert out[5 * b + 4] == pytest.approx(v.std())


class TestPCA:
    def test_correlated_bands_explain_all_variance(self):
        rng = np.random.default_rng(1)
        a = rng.random((4, 4))
        r = raster(np.stack([a, 2.0 * a]))
        pc1 = pca_first_component(r)
        proj = pc1.data[0].ravel()
        total_var = r.data.reshape(2, -1).var(axis=1).sum()
        assert proj.var() == pytest.approx(total_var, rel=1e-9)

    def test_2x2_eigen_oracle(self):
        # covariance [[2,1],[1,2]] has leading eigenvector (1,1)/sqrt(2), value 3
        rng = np.random.default_rng(2)
        z = rng.standard_normal((2, 4000))
        chol = np.linalg.cholesky(np.array([[2.0, 1.0], [1.0, 2.0]]))
        x = chol @ z
        r = raster(x.reshape(2, 40, 100))
        pc1 = pca_first_component(r)
        flat = r.data.reshape(2, -1)
        centered = flat - flat.mean(axis=1, keepdims=True)
        lead_var = pc1.data[0].ravel().var()
        expect = np.linalg.eigvalsh(centered @ centered.T / flat.shape[1])[-1]
        assert lead_var == pytest.approx(expect, rel=1e-9)

    def test_sign_convention(self):
        rng = np.random.default_rng(3)
        a = rng.random((6, 6))
        r = raster(np.stack([a, -0.75 * a]))
        pc1 = pca_first_component(r)
        # leading loading must be positive: projection correlates with band 0
        corr = np.corrcoef(pc1.data[0].ravel(), a.ravel())[0, 1]
        assert corr > 0.99

    def test_degenerate_rejected(self):
        r = raster(np.stack([np.full((3, 3), 0.5), np.full((3, 3), 0.2)]))
        with pytest.raises(ValueError, match="degenerate"):
            pca_first_component(r)

    def test_pc1_beats_random_directions(self):
        rng = np.random.default_rng(4)
        x = rng.random((4, 30, 30))
        r = raster(x)
        pc1_var = pca_first_component(r).data[0].ravel().var()
        flat = x.reshape(4, -1)
        centered = flat - flat.mean(axis=1, keepdims=True)
        for _ in range(100):
            v = rng.standard_normal(4)
            v /= np.linalg.norm(v)
            assert pc1_var >= (v @ centered).var() - 1e-12


class TestGLCM:
    def test_constant_window(self):
        out = glcm_features(raster(np.full((5, 5), 0.7)), (2, 2))
        mean, var, hom, con, dis, ent, asm, cor = out
        assert hom == 1.0 and con == 0.0 and dis == 0.0
        assert ent == pytest.approx(0.0) and asm == 1.0
        assert var == 0.0 and cor == 1.0

    def test_horizontal_stripes_zero_contrast_horizontal_direction(self):
        stripes = np.tile(np.array([[0.0], [1.0]]), (3, 6))[:5, :5]
        out = glcm_features(raster(stripes), (2, 2), levels=2, directions=((0, 1),))
        assert out[3] == 0.0  # contrast: all horizontal pairs identical

    def test_checkerboard_contrast_one_horizontal(self):
        board = np.indices((5, 5)).sum(axis=0) % 2
        out = glcm_features(raster(board.astype(float)), (2, 2), levels=2,
                            directions=((0, 1),))
        assert out[3] == pytest.approx(1.0)  # all pairs differ by exactly 1

    def test_matrix_symmetric_and_normalized(self):
        rng = np.random.default_rng(5)
        p = glcm_matrix(raster(rng.random((9, 9))), (4, 4), window=5, levels=8)
        assert p.sum() == pytest.approx(1.0)
        assert np.allclose(p, p.T)

    def test_counts_match_bruteforce(self):
        rng = np.random.default_rng(6)
        vals = rng.random((7, 7))
        levels = 4
        p = glcm_matrix(raster(vals), (3, 3), window=5, levels=levels)
        win = vals[1:6, 1:6]
        lo, hi = win.min(), win.max()
        q = np.minimum(((win - lo) / (hi - lo) * levels).astype(int), levels - 1)
        counts = np.zeros((levels, levels))
        for dr, dc in ((0, 1), (-1, 1), (-1, 0), (-1, -1)):
            for r in range(5):
                for c in range(5):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < 5 and 0 <= cc < 5:
                        counts[q[r, c], q[rr, cc]] += 1
                        counts[q[rr, cc], q[r, c]] += 1
        assert np.allclose(p, counts / counts.sum())

    def test_window_too_small(self):
        r = raster(np.array([[1.0]]))
        with pytest.raises(ValueError, match="fewer than 2"):
            glcm_matrix(r, (0, 0), window=1)


class TestForest:
    def toy(self, n=200, seed=0):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((n, 5))
        y = (x[:, 0] + 0.1 * rng.standard_normal(n) > 0).astype(int)
        return x, y

    def test_single_class_rejected(self):
        x, _ = self.toy()
        with pytest.raises(ValueError, match="two classes"):
            rf_train(x, np.zeros(len(x), dtype=int), n_trees=3)

    def test_oob_accuracy_on_separable_data(self):
        x, y = self.toy(200, seed=1)
        model = rf_train(x, y, n_trees=50, features_per_split=2, seed=2)
        assert oob_accuracy(model, x, y) >= 0.95

    def test_deterministic(self):
        x, y = self.toy(120, seed=3)
        rng = np.random.default_rng(4)
        probe = rng.standard_normal((30, 5))
        a = rf_predict_batch(rf_train(x, y, n_trees=20, seed=7), probe)
        b = rf_predict_batch(rf_train(x, y, n_trees=20, seed=7), probe)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_memorizes_training_point(self):
        x, y = self.toy(80, seed=5)
        model = rf_train(x, y, n_trees=30, seed=6)
        # a point far from the boundary is classified unanimously
        idx = int(np.argmax(np.abs(x[:, 0])))
        cls, fractions = rf_predict(model, x[idx])
        assert cls == y[idx]
        assert fractions[cls] == pytest.approx(1.0)

    def test_vote_fractions_sum_to_one(self):
        x, y = self.toy(100, seed=8)
        model = rf_train(x, y, n_trees=40, seed=9)
        rng = np.random.default_rng(10)
        _, fr = rf_predict_batch(model, rng.standard_normal((25, 5)))
        assert np.allclose(fr.sum(axis=1), 1.0, atol=1e-12)

    def test_tie_breaks_to_lower_class(self):
        # two identical single-leaf trees voting 50/50 resolve to class 0
        x = np.array([[0.0], [1.0]])
        y = np.array([0, 1])
        model = rf_train(x, y, n_trees=2, features_per_split=1, seed=11)
        _, fr = rf_predict_batch(model, np.array([[0.5]]))
        pred = np.argmax(fr, axis=1)
        if fr[0, 0] == fr[0, 1]:
            assert pred[0] == 0

    def test_feature_length_mismatch(self):
        x, y = self.toy(50, seed=12)
        model = rf_train(x, y, n_trees=5, seed=13)
        with pytest.raises(ValueError, match="features"):
            rf_predict(model, np.zeros(7))

    def test_nan_features_rejected(self):
        x, y = self.toy(50, seed=14)
        x[0, 0] = np.nan
        with pytest.raises(ValueError, match="NaN"):
            rf_train(x, y, n_trees=3)

    def test_forest_beats_single_tree_on_training(self):
        rng = np.random.default_rng(15)
        x = rng.standard_normal((150, 6))
        y = ((x[:, 0] > 0) ^ (x[:, 1] > 0)).astype(int)  # xor: needs depth
        model = rf_train(x, y, n_trees=25, features_per_split=2, seed=16)
        forest_pred, _ = rf_predict_batch(model, x)
        forest_acc = np.mean(forest_pred == y)
        for tree in model.trees[:5]:
            assert forest_acc >= np.mean(tree.predict_class(x) == y) - 1e-12

    def test_serialization_roundtrip(self, tmp_path):
        x, y = self.toy(90, seed=17)
        model = rf_train(x, y, n_trees=10, seed=18)
        save_forest(model, tmp_path / "forest.txt")
        back = load_forest(tmp_path / "forest.txt")
        rng = np.random.default_rng(19)
        probe = rng.standard_normal((40, 5))
        a, fa = rf_predict_batch(model, probe)
        b, fb = rf_predict_batch(back, probe)
        assert np.array_equal(a, b) and np.array_equal(fa, fb)


class TestFeatureVector:
    def test_38_finite_features(self):
        rng = np.random.default_rng(20)
        r = raster(rng.random((6, 9, 9)))
        pc1 = pca_first_component(r)
        vec = features_for_cell(r, pc1, (4, 4))
        assert vec.size == 38
        assert np.all(np.isfinite(vec))
