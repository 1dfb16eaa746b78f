import numpy as np
import pytest

from urbanform import labeler
from urbanform.composite import rolling_median_composite
from urbanform.synthcity import (
    BUILT_SPECTRUM,
    VEGETATION_SPECTRUM,
    CityScenario,
    GrowthAction,
    generate_city_timeline,
    render_reflectance,
    save_scenario,
)


class TestTimeline:
    def test_same_seed_identical(self):
        a = generate_city_timeline(3, [2000, 2001], 96)
        b = generate_city_timeline(3, [2000, 2001], 96)
        for y in (2000, 2001):
            assert np.array_equal(a.bar_grids[y], b.bar_grids[y])
            assert np.array_equal(a.height_grids[y], b.height_grids[y])

    def test_size_minimum(self):
        with pytest.raises(ValueError, match="96"):
            generate_city_timeline(0, [2000], 64)

    def test_highrise_strictly_raises_mean_height(self):
        script = [GrowthAction(2001, "west_towers", "highrise")]
        scn = generate_city_timeline(5, [2000, 2001], 96, script=script)
        mask = scn.region_mask("west_towers")
        before = scn.height_grids[2000][mask].mean()
        after = scn.height_grids[2001][mask].mean()
        assert after > before

    def test_year_without_actions_unchanged(self):
        scn = generate_city_timeline(5, [2000, 2001, 2002], 96,
                                     script=[GrowthAction(2001, "west_suburbs", "infill")])
        assert not np.array_equal(scn.bar_grids[2000], scn.bar_grids[2001])
        assert np.array_equal(scn.bar_grids[2001], scn.bar_grids[2002])
        assert np.array_equal(scn.height_grids[2001], scn.height_grids[2002])

    def test_changes_confined_to_script_region(self):
        script = [GrowthAction(2001, "east_suburbs", "infill")]
        scn = generate_city_timeline(6, [2000, 2001], 128, script=script)
        changed = scn.bar_grids[2000] != scn.bar_grids[2001]
        outside = ~scn.region_mask("east_suburbs")
        assert not np.any(changed & outside)

    def test_ratio_and_height_ranges(self):
        scn = generate_city_timeline(7, [2000], 96)
        assert np.all(scn.bar_grids[2000] >= 0) and np.all(scn.bar_grids[2000] <= 1)
        assert np.all(scn.height_grids[2000] >= 0)

    def test_scripted_classes_roundtrip_through_labeler(self):
        scn = generate_city_timeline(8, [2000], 128)
        labels = labeler.label_grid(scn.bar_raster(2000), scn.height_raster(2000),
                                    "vertical", 2000)
        cbd = scn.region_mask("west_cbd")
        # erode the box so truncated blocks at its rim do not dilute the check
        interior = cbd.copy()
        interior[:2] = interior[-2:] = False
        interior[:, :2] = interior[:, -2:] = False
        core = labels.labels[interior]
        assert np.mean(core == labeler.HIGH) > 0.9

        towers = labels.labels[scn.region_mask("west_towers")]
        assert np.mean(towers == labeler.HIGH) > 0.5

    def test_unknown_region_rejected(self):
        with pytest.raises(ValueError, match="unknown region"):
            generate_city_timeline(9, [2000, 2001], 96,
                                   script=[GrowthAction(2001, "atlantis", "infill")])


class TestRendering:
    def test_pure_vegetation_endpoint(self):
        scn = generate_city_timeline(1, [2000], 96)
        scn.bar_grids[2000][:] = 0.0
        stack = render_reflectance(scn, 2000, noise_std=0.0, qa_dropout=0.0)
        data = stack.observations[0].raster.data
        for b in range(6):
            assert np.allclose(data[b], VEGETATION_SPECTRUM[b])

    def test_pure_built_endpoint(self):
        scn = generate_city_timeline(1, [2000], 96)
        scn.bar_grids[2000][:] = 1.0
        stack = render_reflectance(scn, 2000, noise_std=0.0, qa_dropout=0.0)
        data = stack.observations[0].raster.data
        for b in range(6):
            assert np.allclose(data[b], BUILT_SPECTRUM[b])

    def test_qa_dropout_binomial_expectation(self):
        scn = generate_city_timeline(2, [2000], 96)
        stack = render_reflectance(scn, 2000, 0.0, qa_dropout=0.3, n_observations=6)
        good = np.stack([o.qa for o in stack.observations]).sum(axis=0)
        assert good.mean() == pytest.approx(4.2, abs=0.1)

    def test_negative_noise_rejected(self):
        scn = generate_city_timeline(2, [2000], 96)
        with pytest.raises(ValueError, match="noise_std"):
            render_reflectance(scn, 2000, -0.1)

    def test_drift_scales_bands(self):
        drift = {2000: np.array([1.1, 0.9, 1.0, 1.0, 1.0, 1.0])}
        base = generate_city_timeline(3, [2000], 96)
        drifted = generate_city_timeline(3, [2000], 96, drift=drift)
        a = render_reflectance(base, 2000, 0.0, 0.0).observations[0].raster.data
        b = render_reflectance(drifted, 2000, 0.0, 0.0).observations[0].raster.data
        assert np.allclose(b[0], 1.1 * a[0])
        assert np.allclose(b[1], 0.9 * a[1])
        assert np.allclose(b[2], a[2])

    def test_compositing_recovers_mixture_exactly(self):
        scn = generate_city_timeline(4, [2000], 96)
        stack = render_reflectance(scn, 2000, noise_std=0.0, qa_dropout=0.0)
        comp = rolling_median_composite(stack, 2000)
        bar = scn.bar_grids[2000]
        expect = (bar[None] * BUILT_SPECTRUM[:, None, None]
                  + (1 - bar[None]) * VEGETATION_SPECTRUM[:, None, None])
        assert np.allclose(comp.data, expect, atol=1e-12)

    def test_dates_inside_season(self):
        scn = generate_city_timeline(5, [2000], 96)
        stack = render_reflectance(scn, 2000, 0.0, 0.0, n_observations=6)
        for obs in stack.observations:
            assert (5, 1) <= (obs.date.month, obs.date.day) <= (8, 31)

    def test_deterministic_rendering(self):
        scn = generate_city_timeline(6, [2000], 96)
        a = render_reflectance(scn, 2000, 0.02, 0.2)
        b = render_reflectance(scn, 2000, 0.02, 0.2)
        for oa, ob in zip(a.observations, b.observations):
            assert np.array_equal(oa.raster.data, ob.raster.data)
            assert np.array_equal(oa.qa, ob.qa)


class TestPersistence:
    def test_save_scenario(self, tmp_path):
        scn = generate_city_timeline(7, [2000, 2001], 96)
        save_scenario(scn, tmp_path / "city")
        assert (tmp_path / "city" / "bar_2000.dmr").exists()
        assert (tmp_path / "city" / "height_2001.dmr").exists()
        assert (tmp_path / "city" / "script.csv").exists()
        assert (tmp_path / "city" / "regions.csv").exists()
