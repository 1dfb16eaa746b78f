import numpy as np
import pytest

from urbanform.labeler import (
    COMPACT,
    GROWTH,
    HIGH,
    LOW,
    NO_GROWTH,
    NOT_BUILT,
    OPEN,
    SPARSE,
    UNLABELED,
    DensityLabelGrid,
    DensityScheme,
    block_aggregate,
    classify_horizontal,
    classify_vertical,
    derive_growth_labels,
    label_grid,
)
from urbanform.raster import MultiBandRaster


def grid(values):
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape
    return MultiBandRaster(width=w, height=h, bands=1, band_names=["v"], data=values[None])


class TestClassify:
    @pytest.mark.parametrize(
        "bar,expected",
        [(0.35, COMPACT), (0.30, COMPACT), (0.15, OPEN), (0.299, OPEN),
         (0.02, SPARSE), (0.149, SPARSE), (0.019, NOT_BUILT), (0.0, NOT_BUILT)],
    )
    def test_horizontal_thresholds(self, bar, expected):
        assert classify_horizontal(bar) == expected

    @pytest.mark.parametrize(
        "bar,height,expected",
        [(0.05, 12.0, HIGH), (0.05, 10.0, HIGH), (0.05, 9.9, LOW),
         (0.01, 50.0, NOT_BUILT), (0.02, 0.0, LOW)],
    )
    def test_vertical_thresholds(self, bar, height, expected):
        assert classify_vertical(bar, height) == expected

    def test_horizontal_monotone_in_bar(self):
        bars = np.linspace(0, 1, 500)
        ranks = [classify_horizontal(float(b)) for b in bars]
        assert all(b >= a for a, b in zip(ranks, ranks[1:]))

    def test_scheme_invariant(self):
        with pytest.raises(ValueError, match="decreasing"):
            DensityScheme(compact_min=0.1, open_min=0.15, built_min=0.02)


class TestBlockAggregate:
    def test_constant_block(self):
        bar = grid(np.full((5, 5), 0.4))
        height = grid(np.zeros((5, 5)))
        block_bar, _ = block_aggregate(bar, height, (2, 2))
        assert block_bar == pytest.approx(0.4)

    def test_single_built_cell_weighted_height(self):
        bars = np.zeros((5, 5))
        heights = np.zeros((5, 5))
        bars[2, 2] = 0.5
        heights[2, 2] = 20.0
        block_bar, mean_h = block_aggregate(grid(bars), grid(heights), (2, 2))
        assert block_bar == pytest.approx(0.02)
        assert mean_h == pytest.approx(20.0)

    def test_corner_truncates_to_9_cells(self):
        bars = np.zeros((5, 5))
        bars[:3, :3] = 0.9
        block_bar, _ = block_aggregate(grid(bars), grid(np.zeros((5, 5))), (0, 0))
        assert block_bar == pytest.approx(0.9)  # mean over the 9 in-bounds cells

    def test_weighted_mean_oracle(self):
        rng = np.random.default_rng(4)
        bars = rng.random((7, 7)) * (rng.random((7, 7)) < 0.5)
        heights = rng.random((7, 7)) * 30
        block_bar, mean_h = block_aggregate(grid(bars), grid(heights), (3, 3))
        sub_b = bars[1:6, 1:6]
        sub_h = heights[1:6, 1:6]
        assert block_bar == pytest.approx(sub_b.mean())
        built = sub_b > 0
        expect = (sub_b[built] * sub_h[built]).sum() / sub_b[built].sum()
        assert mean_h == pytest.approx(expect)

    def test_geometry_mismatch(self):
        with pytest.raises(ValueError, match="geometry"):
            block_aggregate(grid(np.zeros((2, 2))), grid(np.zeros((3, 3))), (0, 0))


class TestLabelGrid:
    def test_matches_bruteforce_per_cell(self):
        rng = np.random.default_rng(8)
        for dim in ("horizontal", "vertical"):
            bars = rng.random((21, 17)) * 0.6
            heights = rng.random((21, 17)) * 25
            bar_r, h_r = grid(bars), grid(heights)
            labels = label_grid(bar_r, h_r, dim, 2014)
            for r in range(21):
                for c in range(17):
                    bb, mh = block_aggregate(bar_r, h_r, (r, c))
                    expect = (classify_horizontal(bb) if dim == "horizontal"
                              else classify_vertical(bb, mh))
                    assert labels.labels[r, c] == expect, (dim, r, c)

    def test_raster_roundtrip_with_unlabeled(self, tmp_path):
        labels = np.array([[COMPACT, UNLABELED], [NOT_BUILT, SPARSE]], dtype=np.int16)
        g = DensityLabelGrid(width=2, height=2, dimension="horizontal", epoch=2006,
                             labels=labels)
        back = DensityLabelGrid.from_raster(g.to_raster())
        assert back.dimension == "horizontal"
        assert back.epoch == 2006
        assert np.array_equal(back.labels, labels)


class TestGrowth:
    def g(self, labels, dimension="vertical", epoch=2006):
        labels = np.asarray(labels, dtype=np.int16)
        return DensityLabelGrid(width=labels.shape[1], height=labels.shape[0],
                                dimension=dimension, epoch=epoch, labels=labels)

    def test_not_built_to_high_is_growth(self):
        out = derive_growth_labels(self.g([[NOT_BUILT]]), self.g([[HIGH]], epoch=2014))
        assert out[0, 0] == GROWTH

    def test_no_change_is_no_growth(self):
        out = derive_growth_labels(
            self.g([[COMPACT]], "horizontal"), self.g([[COMPACT]], "horizontal", 2014)
        )
        assert out[0, 0] == NO_GROWTH

    def test_decrease_is_no_growth(self):
        out = derive_growth_labels(
            self.g([[COMPACT]], "horizontal"), self.g([[OPEN]], "horizontal", 2014)
        )
        assert out[0, 0] == NO_GROWTH

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            derive_growth_labels(self.g([[0]]), self.g([[0]], "horizontal", 2014))

    def test_epoch_order_enforced(self):
        with pytest.raises(ValueError, match="epochs"):
            derive_growth_labels(self.g([[0]], epoch=2014), self.g([[0]], epoch=2006))

    def test_antisymmetric(self):
        rng = np.random.default_rng(12)
        a = rng.integers(0, 3, (10, 10)).astype(np.int16)
        b = rng.integers(0, 3, (10, 10)).astype(np.int16)
        forward = derive_growth_labels(self.g(a), self.g(b, epoch=2014))
        backward = derive_growth_labels(self.g(b), self.g(a, epoch=2014))
        assert not np.any((forward == GROWTH) & (backward == GROWTH))

    def test_unlabeled_cells_no_growth(self):
        out = derive_growth_labels(self.g([[UNLABELED]]), self.g([[HIGH]], epoch=2014))
        assert out[0, 0] == NO_GROWTH
