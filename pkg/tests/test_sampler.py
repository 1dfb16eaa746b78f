import numpy as np
import pytest

from urbanform.labeler import NOT_BUILT, UNLABELED, DensityLabelGrid
from urbanform.raster import MultiBandRaster
from urbanform.sampler import (
    PatchDataset,
    SampleSite,
    balance_classes,
    extract_patches,
    load_dataset,
    save_dataset,
    sites_from_grid,
    split_train_validation,
    thin_by_distance,
)


def make_inputs(size=96, seed=0, labeled_every=5):
    rng = np.random.default_rng(seed)
    comp = MultiBandRaster(width=size, height=size, bands=3,
                           band_names=["a", "b", "c"], data=rng.random((3, size, size)))
    labels = np.full((size, size), UNLABELED, dtype=np.int16)
    rows = np.arange(1, size, labeled_every)
    for r in rows:
        for c in rows:
            labels[r, c] = rng.integers(0, 4)
    grid = DensityLabelGrid(width=size, height=size, dimension="horizontal",
                            epoch=2014, labels=labels)
    return comp, grid


class TestThinning:
    def site(self, row, col, label=1):
        return SampleSite(row, col, label)

    def test_two_close_sites_one_kept(self):
        # 120 m apart at 30 m cells = 4 cells
        kept = thin_by_distance([self.site(0, 0), self.site(0, 4)], 150.0, seed=0)
        assert len(kept) == 1

    def test_exactly_150m_both_kept(self):
        kept = thin_by_distance([self.site(0, 0), self.site(0, 5)], 150.0, seed=0)
        assert len(kept) == 2

    def test_single_site_kept(self):
        assert len(thin_by_distance([self.site(3, 3)], seed=1)) == 1

    def test_pairwise_distances_bruteforce(self):
        rng = np.random.default_rng(7)
        sites = [self.site(int(r), int(c)) for r, c in rng.integers(0, 60, (300, 2))]
        kept = thin_by_distance(sites, 150.0, seed=3)
        for i in range(len(kept)):
            for j in range(i + 1, len(kept)):
                d = 30.0 * np.hypot(kept[i].row - kept[j].row, kept[i].col - kept[j].col)
                assert d >= 150.0

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        sites = [self.site(int(r), int(c)) for r, c in rng.integers(0, 40, (100, 2))]
        a = thin_by_distance(sites, seed=5)
        b = thin_by_distance(sites, seed=5)
        assert [(s.row, s.col) for s in a] == [(s.row, s.col) for s in b]


class TestBalance:
    def sites(self, counts):
        out = []
        for label, count in counts.items():
            out.extend(SampleSite(i, label * 1000, label) for i in range(count))
        return out

    def test_cap_applied(self):
        sites = self.sites({0: 1000, 1: 100, 2: 50})
        out = balance_classes(sites, 5.0, seed=0)
        labels = np.array([s.label for s in out])
        assert np.sum(labels == 0) == 500
        assert np.sum(labels == 1) == 100 and np.sum(labels == 2) == 50

    def test_under_cap_unchanged(self):
        sites = self.sites({0: 400, 1: 100})
        assert len(balance_classes(sites, 5.0, seed=0)) == 500

    def test_deterministic(self):
        sites = self.sites({0: 1000, 1: 100})
        a = balance_classes(sites, 5.0, seed=9)
        b = balance_classes(sites, 5.0, seed=9)
        assert [(s.row, s.col) for s in a] == [(s.row, s.col) for s in b]

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="two classes"):
            balance_classes(self.sites({0: 10}), seed=0)

    def test_other_classes_never_touched(self):
        rng = np.random.default_rng(1)
        sites = self.sites({0: 800, 1: 90, 2: 60, 3: 30})
        out = balance_classes(sites, 5.0, seed=2)
        before = {label: sum(1 for s in sites if s.label == label) for label in (1, 2, 3)}
        after = {label: sum(1 for s in out if s.label == label) for label in (1, 2, 3)}
        assert before == after
        assert sum(1 for s in out if s.label == 0) <= 5 * 90


class TestExtract:
    def test_nine_candidate_origins(self):
        comp, grid = make_inputs(96)
        sites = sites_from_grid(grid)
        ds = extract_patches(comp, grid, sites, 48, 24)
        origins = {p.origin for p in ds.patches}
        assert origins <= {(r, c) for r in (0, 24, 48) for c in (0, 24, 48)}
        assert len(ds.patches) == 9  # labels everywhere, all patches heterogeneous

    def test_all_not_built_patch_dropped(self):
        comp, grid = make_inputs(96)
        sites = [SampleSite(10, 10, NOT_BUILT)]
        ds = extract_patches(comp, grid, sites, 48, 24)
        assert len(ds.patches) == 0

    def test_patch_with_built_label_kept(self):
        comp, grid = make_inputs(96)
        sites = [SampleSite(10, 10, NOT_BUILT), SampleSite(20, 20, 2)]
        ds = extract_patches(comp, grid, sites, 48, 24)
        assert len(ds.patches) > 0
        for p in ds.patches:
            assert p.loss_mask.sum() >= 1

    def test_mask_only_at_sites(self):
        comp, grid = make_inputs(96)
        sites = [SampleSite(5, 7, 1)]
        ds = extract_patches(comp, grid, sites, 48, 24)
        for p in ds.patches:
            rows, cols = np.nonzero(p.loss_mask)
            for r, c in zip(rows, cols):
                assert (p.origin[0] + r, p.origin[1] + c) == (5, 7)
                assert p.labels[r, c] == 1

    def test_patch_too_large(self):
        comp, grid = make_inputs(96)
        with pytest.raises(ValueError, match="patch_size"):
            extract_patches(comp, grid, [], 128, 24)

    def test_step_larger_than_patch_rejected(self):
        with pytest.raises(ValueError, match="step"):
            PatchDataset([], patch_size=48, step=64)


class TestSplit:
    def dataset(self, size=192, seed=0):
        # patch 24 -> hash blocks of 48 -> a 4x4 block grid, enough for a split
        comp, grid = make_inputs(size, seed)
        sites = sites_from_grid(grid)
        return extract_patches(comp, grid, sites, 24, 12)

    def test_partition_and_disjoint_footprints(self):
        ds = self.dataset()
        train, val = split_train_validation(ds, 0.3, seed=1)
        assert len(train.patches) + len(val.patches) <= len(ds.patches)
        assert len(train.patches) and len(val.patches)

        def cells(dataset):
            out = set()
            for p in dataset.patches:
                rows, cols = np.nonzero(p.loss_mask)
                out |= {(p.origin[0] + r, p.origin[1] + c) for r, c in zip(rows, cols)}
            return out

        assert not (cells(train) & cells(val))

    def test_deterministic(self):
        ds = self.dataset()
        a_train, a_val = split_train_validation(ds, 0.3, seed=2)
        b_train, b_val = split_train_validation(ds, 0.3, seed=2)
        assert [p.origin for p in a_train.patches] == [p.origin for p in b_train.patches]
        assert [p.origin for p in a_val.patches] == [p.origin for p in b_val.patches]

    def test_extreme_fraction_errors(self):
        ds = self.dataset()
        with pytest.raises(ValueError, match="fraction"):
            split_train_validation(ds, 0.999999, seed=0)

    def test_no_all_not_built_after_trim(self):
        ds = self.dataset()
        train, val = split_train_validation(ds, 0.3, seed=3)
        for p in train.patches + val.patches:
            labs = p.labels[p.loss_mask]
            assert labs.size > 0
            assert not np.all(labs == NOT_BUILT)


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        comp, grid = make_inputs(96, seed=5)
        ds = extract_patches(comp, grid, sites_from_grid(grid), 48, 24)
        save_dataset(ds, tmp_path / "ds")
        back = load_dataset(tmp_path / "ds")
        assert len(back.patches) == len(ds.patches)
        assert back.patch_size == 48 and back.step == 24
        assert back.band_names == ds.band_names
        for a, b in zip(ds.patches, back.patches):
            assert a.origin == b.origin
            assert np.allclose(a.input, b.input, atol=1e-6)  # float32 on disk
            assert np.array_equal(a.labels, b.labels)
            assert np.array_equal(a.loss_mask, b.loss_mask)
