"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 9 and 10 are soft targets: they report and warn, never fail.
"""
import resource
import time
import warnings

import numpy as np
import pytest
from scipy.special import erfc

from izflood.izmesh import delineate_zones, prism_mesh, waterfront_zones
from izflood.scenario import Scenario, ScenarioConfig, run_scenario, write_island_scenario
from izflood.subsurface import PorousParams, SubsurfaceGrid, SurfaceBC, build_grid, darcy_velocity
from izflood.surface import (Hydrograph, SurfaceConfig, SurfaceModel, apply_surcharge_rates, initial_state,
                             step_surface)
from izflood.terrain import synth_terrain

RHO_G = 1000.0 * 9.81


def test_1_darcy_steady_column(criterion):
    t0 = time.perf_counter()
    params = PorousParams(storage=1e-6, permeability=1e-9)
    L, dh = 10.0, 1.0
    g = SubsurfaceGrid(np.array([[0.0]]), 1.0, L, 20, params, bottom_head=0.0, tol=1e-14)
    g.step(SurfaceBC(np.array([dh])), np.inf)
    head = g.phi / RHO_G
    err = np.max(np.abs(head - (dh + g.z_center[0] / L)))
    v = -darcy_velocity(g).vertical[0]
    v_exact = 1e-9 / 1e-3 * RHO_G * dh / L
    flux_err = np.max(np.abs(v - v_exact)) / v_exact
    elapsed = time.perf_counter() - t0
    ok = err < 1e-8 and flux_err < 1e-10 and elapsed < 1.0
    criterion(1, ok, f"max head error {err:.2e} m, flux error {flux_err:.2e}, {elapsed:.3f} s")
    assert err < 1e-8
    assert flux_err < 1e-10
    assert elapsed < 1.0


def test_2_darcy_transient_erfc(criterion):
    t0 = time.perf_counter()
    params = PorousParams(storage=1e-6, permeability=1e-9)
    D = params.permeability / (params.viscosity * params.storage)
    T, depth = 1.0, 20.0
    errors = []
    for nz, steps in ((50, 25), (100, 50), (200, 100)):
        g = SubsurfaceGrid(np.array([[0.0]]), 1.0, depth, nz, params, tol=1e-13)
        bc = SurfaceBC(np.array([1.0]))
        for _ in range(steps):
            g.step(bc, T / steps)
        d = -g.z_center[0]
        exact = erfc(d / (2.0 * np.sqrt(D * T)))
        errors.append(np.linalg.norm(g.phi / RHO_G - exact) / np.linalg.norm(exact))
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    elapsed = time.perf_counter() - t0
    ok = errors[-1] < 0.01 and orders.min() >= 1.0 and elapsed < 30.0
    criterion(2, ok, f"L2 errors {', '.join(f'{e:.3%}' for e in errors)}; "
                     f"orders {', '.join(f'{o:.2f}' for o in orders)}; {elapsed:.2f} s")
    assert errors[-1] < 0.01
    assert orders.min() >= 1.0
    assert elapsed < 30.0


def test_3_surface_conservation(criterion):
    dtm = synth_terrain("rough", 40, 40, cellsize=20.0, relief=3.0, noise=0.4, seed=3)
    mesh = delineate_zones(dtm)
    zones = np.array([0, mesh.n_zones // 2, mesh.n_zones - 1])
    cfg = SurfaceConfig(dt=5.0, waterfront_zones=zones, waterfront_lengths=[60.0, 40.0, 80.0],
                        flood_threshold=-3.0)
    hyd = Hydrograph([0.0, 25_000.0, 50_000.0], [-3.0, 1.0, -2.0])
    model = SurfaceModel(mesh, cfg, hyd)
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    for _ in range(10_000):
        model.step(rng.normal(0.0, 2e-6, size=mesh.n_zones))
    elapsed = time.perf_counter() - t0
    s = model.state
    err = s.balance_error()
    ok = err <= 1e-9 and elapsed < 30.0
    criterion(3, ok, f"{mesh.n_zones} zones, 10000 steps: relative balance error {err:.2e}, "
                     f"inflow {s.inflow_total:.4g} m³, clipped {s.clipped_total:.3g} m³, {elapsed:.1f} s")
    assert s.inflow_total != 0 and s.surcharge_total != 0
    assert err <= 1e-9
    assert elapsed < 30.0


def test_4_equalization(criterion):
    # unequal plan areas and bottoms; the common level is volume-weighted
    areas = np.array([1.0e4, 3.0e4])
    mesh = prism_mesh([0.0, -0.5], areas, [(0, 1, 0.0, 40.0, 100.0)], height=10.0)
    v0 = np.array([2.0 * areas[0], 0.5 * areas[1]])  # levels 2.0 and 0.0
    s = initial_state(mesh, v0)
    common = (v0.sum() + areas[1] * -0.5) / areas.sum()
    cfg = SurfaceConfig(dt=10.0)
    diffs = [s.level[0] - s.level[1]]
    for _ in range(3000):
        s = step_surface(s, mesh, cfg)
        diffs.append(s.level[0] - s.level[1])
    d = np.array(diffs)
    reversals = int(np.sum(d < 0))
    monotone = bool(np.all(np.diff(d) <= 0))
    err = np.max(np.abs(s.level - common))
    ok = reversals == 0 and monotone and err < 1e-6
    criterion(4, ok, f"common level {common:.6f} m reached within {err:.1e} m; "
                     f"{reversals} sign reversals; monotone={monotone}")
    assert reversals == 0
    assert monotone
    assert err < 1e-6


def test_5_mass_rate_anchor(criterion):
    mesh = prism_mesh([0.0], 3.6e8, height=1.0)
    cfg = SurfaceConfig(dt=10.0)
    s = initial_state(mesh)
    rate = np.array([2500.0 / 3.6e8])  # m/s over the plan area
    for _ in range(360):
        s = step_surface(s, mesh, cfg, sources=apply_surcharge_rates(s, rate, cfg, mesh))
    rise = s.level[0] - mesh.z_min[0]
    ok = abs(rise - 0.025) < 1e-12
    criterion(5, ok, f"level rise after 1 h: {rise * 100:.10f} cm")
    assert abs(rise - 0.025) < 1e-12


def test_6_threshold(criterion, tmp_path):
    path = write_island_scenario(tmp_path, coupling="off", peak_level=1.2999, end_time=3 * 3600.0)
    code, run = run_scenario(ScenarioConfig.load(path), tmp_path / "out")
    total = max(float(v.sum()) for v in run.volumes)
    inflow = run.states[-1].inflow_total
    ok = code == 0 and total == 0.0 and inflow == 0.0
    criterion(6, ok, f"sea peak 1.2999 m: max stored volume {total} m³, boundary inflow {inflow} m³")
    assert code == 0
    assert total == 0.0 and inflow == 0.0


def test_7_subsurface_fed_inland_flooding(criterion, tmp_path):
    results = {}
    for mode in ("off", "in_process"):
        path = write_island_scenario(tmp_path / mode, coupling=mode)
        cfg = ScenarioConfig.load(path)
        code, run = run_scenario(cfg, tmp_path / mode / "out")
        assert code == 0
        mesh = Scenario(cfg).mesh
        basin = mesh.labels[20, 20]
        wf, _ = waterfront_zones(mesh, Scenario(cfg).dtm)
        assert basin not in wf  # hydraulically isolated from the sea
        depth = np.array([lv[basin] for lv in run.levels]) - mesh.z_min[basin]
        vols = np.array([v[basin] for v in run.volumes])
        results[mode] = (depth, vols)
    off_depth, off_vol = results["off"]
    on_depth, on_vol = results["in_process"]
    ok = np.all(off_vol == 0.0) and np.all(off_depth == 0.0) and on_depth[-1] > 0 and on_vol[-1] > 0
    criterion(7, ok, f"interior basin depth at end: uncoupled {off_depth[-1]:.3g} m, "
                     f"coupled {on_depth[-1]:.3g} m ({on_vol[-1]:.3g} m³)")
    assert np.all(off_vol == 0.0) and np.all(off_depth == 0.0)
    assert on_depth[-1] > 0


def test_8_distributed_equivalence(criterion, tmp_path):
    import queue
    import threading

    from izflood.coupling import serve_subsurface

    path = write_island_scenario(tmp_path, end_time=2 * 3600.0)
    cfg = ScenarioConfig.load(path)
    _, local = run_scenario(cfg, tmp_path / "local")

    server_model = Scenario(cfg).subsurface_model()
    ports, result = queue.Queue(), {}
    th = threading.Thread(target=lambda: result.setdefault(
        "code", serve_subsurface(("127.0.0.1", 0), server_model, timeout=30.0, on_ready=ports.put,
                                 accept_timeout=30.0)), daemon=True)
    th.start()
    port = ports.get(timeout=30.0)
    code, remote = run_scenario(cfg, tmp_path / "remote", coupling=f"connect 127.0.0.1:{port}")
    th.join(30.0)
    assert code == 0 and result["code"] == 0
    assert local.times == remote.times
    diff = max(float(np.max(np.abs(a - b))) for a, b in zip(local.levels, remote.levels))
    ok = diff <= 1e-12
    criterion(8, ok, f"max per-zone level difference over {len(local.times)} output times: {diff:.1e} m")
    assert diff <= 1e-12


def test_9_scale_target(criterion):
    # 5 km x 7.5 km x 20 m, ~50,000 cells, 30 min of physical time
    dtm = synth_terrain("rough", 100, 150, cellsize=50.0, relief=2.0, noise=0.3, seed=1)
    t0 = time.perf_counter()
    g = build_grid(dtm, 20.0, 3, PorousParams(1e-8, 1e-10))
    h = np.where(g.z_top < 0, -g.z_top, 0.0)
    bc = SurfaceBC(h)
    for _ in range(30):
        g.step(bc, 60.0)
    elapsed = time.perf_counter() - t0
    rss_mb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0
    ok = elapsed <= 60.0
    criterion(9, ok, f"{g.n} cells, 30 min in 30 steps: {elapsed:.2f} s wall (target 60 s), "
                     f"peak RSS {rss_mb:.0f} MB (soft)")
    if not ok:
        warnings.warn(f"scale target missed: {elapsed:.1f} s > 60 s")


def test_10_preprocessing_reduction(criterion):
    dtm = synth_terrain("rough", 500, 1000, cellsize=10.0, relief=5.0, noise=0.2, seed=0)
    t0 = time.perf_counter()
    mesh = delineate_zones(dtm, merge_eps=0.05)
    elapsed = time.perf_counter() - t0
    ratio = mesh.n_zones / dtm.valid.sum()
    ok = ratio < 0.25
    criterion(10, ok, f"{dtm.valid.sum()} cells -> {mesh.n_zones} zones ({ratio:.2%} of cells), "
                      f"{elapsed:.2f} s (soft)")
    if not ok:
        warnings.warn(f"zone count {ratio:.1%} of cells, target < 25%")
