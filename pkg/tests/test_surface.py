import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from izflood.izmesh import delineate_zones, prism_mesh
from izflood.surface import (Hydrograph, HydrographRangeError, SurfaceConfig, SurfaceModel,
                             apply_surcharge_rates, boundary_inflow, depth_raster, initial_state,
                             manning_discharge, step_surface, weir_discharge)
from izflood.terrain import synth_terrain

# frozen from a 40-digit decimal evaluation of the closed-form expressions
WEIR_CD06_L10_H05 = 6.264183905346330
MANNING_N005_L10_D1_S0001 = 6.324555320336759
SEA_180_THRESHOLD_130_L100_DT10 = 626.4183905346330


class TestDischargeLaws:
    def test_weir_regression_constant(self):
        assert weir_discharge(0.5, -1.0, 0.0, 10.0, cd=0.6) == pytest.approx(WEIR_CD06_L10_H05, rel=1e-14)

    def test_weir_equal_levels(self):
        assert weir_discharge(2.0, 2.0, 0.0, 10.0) == 0.0

    def test_weir_dry(self):
        assert weir_discharge(0.9, 0.2, 1.0, 10.0) == 0.0
        assert weir_discharge(1.0, 0.2, 1.0, 10.0) == 0.0

    def test_weir_submergence_reduces_flow(self):
        free = weir_discharge(1.5, 0.0, 1.0, 10.0)
        drowned = weir_discharge(1.5, 1.4, 1.0, 10.0)
        assert 0 < drowned < free

    def test_manning_regression_constant(self):
        q = manning_discharge(2.0, 1.99, 1.0, 10.0, 10.0, n=0.05)
        assert q == pytest.approx(MANNING_N005_L10_D1_S0001, rel=1e-6)

    def test_manning_zero_cases(self):
        assert manning_discharge(1.0, 1.0, 0.0, 10.0, 5.0) == 0.0
        assert manning_discharge(-0.5, -1.0, 0.0, 10.0, 5.0) == 0.0

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 100), st.floats(1, 100))
    def test_antisymmetric(self, a, b, crest, length, dist):
        assert weir_discharge(a, b, crest, length) == -weir_discharge(b, a, crest, length)
        assert manning_discharge(a, b, crest, length, dist) == -manning_discharge(b, a, crest, length, dist)
        # flow goes downhill
        assert weir_discharge(a, b, crest, length) * (a - b) >= 0


def two_prisms(level_a=1.0, level_b=0.0, crest=0.0, area=1.0e4):
    mesh = prism_mesh([0.0, 0.0], area, [(0, 1, crest, 50.0, 100.0)], height=10.0)
    state = initial_state(mesh, [level_a * area, level_b * area])
    return mesh, state


class TestStepping:
    def test_equalization_monotone(self):
        mesh, s = two_prisms()
        cfg = SurfaceConfig(dt=10.0)
        total = s.volume.sum()
        diffs = [s.level[0] - s.level[1]]
        for _ in range(2000):
            s = step_surface(s, mesh, cfg)
            diffs.append(s.level[0] - s.level[1])
            assert abs(s.volume.sum() - total) <= 1e-9 * total
        d = np.array(diffs)
        assert np.all(d >= 0)
        assert np.all(np.diff(d) <= 0)
        np.testing.assert_allclose(s.level, [0.5, 0.5], atol=1e-6)

    def test_manning_equalization(self):
        mesh, s = two_prisms(2.0, 0.5)
        cfg = SurfaceConfig(dt=5.0, law="manning")
        for _ in range(3000):
            s = step_surface(s, mesh, cfg)
            assert s.level[0] >= s.level[1]
        np.testing.assert_allclose(s.level, [1.25, 1.25], atol=1e-4)

    def test_equilibrium_is_fixed_point(self):
        mesh, s = two_prisms(0.7, 0.7)
        new = step_surface(s, mesh, SurfaceConfig())
        np.testing.assert_array_equal(new.volume, s.volume)
        np.testing.assert_array_equal(new.level, s.level)
        assert new.t == s.t + 10.0

    def test_constant_source_rate(self):
        mesh = prism_mesh([0.0], 3.6e8, height=1.0)
        cfg = SurfaceConfig(dt=10.0)
        s = initial_state(mesh)
        for _ in range(360):
            s = step_surface(s, mesh, cfg, sources=np.array([2500.0 * cfg.dt]))
        assert s.t == pytest.approx(3600.0)
        assert s.level[0] == pytest.approx(0.025, abs=1e-12)

    def test_limiter_keeps_volumes_nonnegative(self):
        # tiny donor, huge head: the limiter must stop it going negative
        mesh = prism_mesh([0.0, -5.0, -5.0], 1.0, [(0, 1, 0.0, 1e3, 1.0), (0, 2, 0.0, 1e3, 1.0)])
        s = initial_state(mesh, [0.5, 0.0, 0.0])
        for _ in range(100):
            s = step_surface(s, mesh, SurfaceConfig(dt=60.0))
            assert np.all(s.volume >= 0)
        assert s.clipped_total == 0.0
        assert s.balance_error() < 1e-12

    def test_overflow_names_time(self):
        mesh = prism_mesh([0.0], 1.0, height=1.0)
        s = initial_state(mesh)
        with pytest.raises(Exception, match="headroom"):
            step_surface(s, mesh, SurfaceConfig(), sources=np.array([5.0]))

    def test_random_terrain_conservation(self, rng):
        dtm = synth_terrain("rough", 30, 30, cellsize=10.0, noise=0.5, seed=11)
        mesh = delineate_zones(dtm)
        cfg = SurfaceConfig(dt=5.0, waterfront_zones=[0, 1], waterfront_lengths=[30.0, 20.0],
                            flood_threshold=0.0)
        hyd = Hydrograph([0.0, 5000.0], [0.0, 2.0])
        model = SurfaceModel(mesh, cfg, hyd)
        for _ in range(500):
            model.step(rng.normal(scale=1e-5, size=mesh.n_zones))
        s = model.state
        assert s.inflow_total > 0
        assert s.balance_error() <= 1e-9


class TestBoundary:
    def config(self):
        return SurfaceConfig(dt=10.0, waterfront_zones=[0], waterfront_lengths=[100.0])

    def test_below_threshold_no_inflow(self):
        mesh = prism_mesh([0.0], 1e4)
        s = initial_state(mesh)
        hyd = Hydrograph.constant(1.29, 100.0)
        np.testing.assert_array_equal(boundary_inflow(hyd, s, self.config()), [0.0])

    def test_at_threshold_no_inflow(self):
        mesh = prism_mesh([0.0], 1e4)
        s = initial_state(mesh)
        assert boundary_inflow(Hydrograph.constant(1.30, 100.0), s, self.config())[0] == 0.0

    def test_regression_volume(self):
        mesh = prism_mesh([0.0], 1e4)
        s = initial_state(mesh)
        v = boundary_inflow(Hydrograph.constant(1.80, 100.0), s, self.config())
        assert v[0] == pytest.approx(SEA_180_THRESHOLD_130_L100_DT10, rel=1e-14)

    def test_outflow_to_sea_is_limited(self):
        mesh = prism_mesh([0.0], 1e4)
        s = initial_state(mesh, [3.0e4])  # level 3 m, sea 0
        cfg = SurfaceConfig(dt=60.0, waterfront_zones=[0], waterfront_lengths=[100.0])
        v = boundary_inflow(Hydrograph.constant(0.0, 100.0), s, cfg)
        assert v[0] == pytest.approx(-0.25 * 3.0e4)

    def test_delay(self):
        cfg = SurfaceConfig(dt=10.0, waterfront_zones=[0], waterfront_lengths=[100.0],
                            waterfront_delay=[100.0])
        mesh = prism_mesh([0.0], 1e4)
        s = initial_state(mesh, t=50.0)
        hyd = Hydrograph([0.0, 60.0, 1000.0], [1.0, 3.0, 3.0])
        assert boundary_inflow(hyd, s, cfg)[0] == 0.0  # sees t=0, sea at 1.0

    def test_hydrograph_range(self, tmp_path):
        hyd = Hydrograph([0.0, 10.0], [0.0, 1.0])
        assert hyd.level_at(5.0) == 0.5
        with pytest.raises(HydrographRangeError):
            hyd.level_at(11.0)
        hyd.to_csv(tmp_path / "h.csv")
        back = Hydrograph.from_csv(tmp_path / "h.csv")
        np.testing.assert_array_equal(back.times, hyd.times)


class TestSurcharge:
    def test_zero_rates(self):
        mesh = prism_mesh([0.0], 1e4)
        s = initial_state(mesh)
        np.testing.assert_array_equal(apply_surcharge_rates(s, np.zeros(1), SurfaceConfig(), mesh), [0.0])

    def test_dry_zone_arithmetic(self):
        mesh = prism_mesh([0.0], 1e4)
        s = initial_state(mesh)
        v = apply_surcharge_rates(s, np.array([1e-4]), SurfaceConfig(dt=10.0), mesh)
        assert v[0] == pytest.approx(10.0)

    def test_sink_clipped_to_empty(self):
        mesh = prism_mesh([0.0], 1e4)
        s = initial_state(mesh, [5.0])
        cfg = SurfaceConfig(dt=10.0)
        src = apply_surcharge_rates(s, np.array([-1e-3]), cfg, mesh)
        new = step_surface(s, mesh, cfg, sources=src)
        assert new.volume[0] == 0.0
        assert new.clipped_total == pytest.approx(-src[0] - 5.0)
        assert new.balance_error() < 1e-15

    def test_wetted_area_basis(self):
        dtm = synth_terrain("single_basin", 21, 21, radius=10.0, depth=1.0, rim=1.0)
        mesh = delineate_zones(dtm)
        s = initial_state(mesh, [50.0])
        rates = np.array([1e-3])
        auto = apply_surcharge_rates(s, rates, SurfaceConfig(dt=1.0), mesh)
        plan = apply_surcharge_rates(s, rates, SurfaceConfig(dt=1.0, surcharge_area="plan"), mesh)
        assert auto[0] < plan[0]
        assert plan[0] == pytest.approx(1e-3 * 441.0)


class TestDepthRaster:
    def test_dry(self):
        dtm = synth_terrain("two_basin", 21, 21)
        mesh = delineate_zones(dtm)
        d = depth_raster(initial_state(mesh), mesh, dtm)
        assert np.all(d.elevation == 0.0)

    def test_prism_uniform_depth(self):
        dtm = synth_terrain("flat", 5, 5, z0=1.0)
        mesh = delineate_zones(dtm)
        s = initial_state(mesh, [0.5 * 25.0])
        d = depth_raster(s, mesh, dtm)
        np.testing.assert_allclose(d.elevation, 0.5)

    def test_paraboloid_shape(self):
        dtm = synth_terrain("single_basin", 21, 21, radius=10.0, depth=1.0, rim=1.0)
        mesh = delineate_zones(dtm)
        v = mesh.tables.volume(np.array([0.5]))
        d = depth_raster(initial_state(mesh, v), mesh, dtm).elevation
        assert d[10, 10] == d.max() == pytest.approx(0.5)
        assert d[0, 0] == 0.0
        # shoreline contour where z = 0.5: r^2 = 50 cells^2
        r2 = (np.indices(d.shape) - 10.0) ** 2
        assert np.all(d[r2.sum(0) >= 50] < 1e-12)
