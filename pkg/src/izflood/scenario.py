"""Scenario configuration, model assembly and run outputs.

A scenario is a JSON document; relative paths resolve against the config
file's directory. See the README for the schema.
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import math
import platform
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .coupling import (CouplingSchedule, LocalSubsurface, RemoteSubsurface, parse_endpoint,
                       run_coupled, run_uncoupled)
from .izmesh import delineate_zones, load_mesh, waterfront_zones
from .subsurface import (DRY_MODES, RATE_MODES, ColumnZoneMap, PorousParams, SubsurfaceModel,
                         build_grid, default_coarsening)
from .surface import Hydrograph, SurfaceConfig, SurfaceModel, depth_raster
from .terrain import read_ascii_grid, save_ascii_grid

log = logging.getLogger(__name__)

DEFAULTS = {
    "dtm": None,
    "mesh": None,
    "hydrograph": None,
    "flood_threshold": 1.30,
    "surface": {
        "dt": 10.0,
        "law": "weir",
        "weir_coefficient": 0.6,
        "manning_n": 0.05,
        "limiter_fraction": 0.25,
        "surcharge_area": "auto",
        "waterfront": "auto",
        "headroom": 10.0,
        "merge_eps": None,
    },
    "subsurface": {
        "storage": None,
        "permeability": None,
        "viscosity": 1.0e-3,
        "density": 1000.0,
        "g": 9.81,
        "depth": 20.0,
        "nz": 10,
        "coarsen": None,
        "dry_mode": "no_flow",
        "rate_mode": "flux",
        "dt": 60.0,
        "tol": 1e-10,
    },
    "schedule": {"coupling_interval": 60.0, "end_time": 3600.0},
    "output": {"dir": "out", "interval": 600.0},
    "coupling": "off",
    "timeout": 60.0,
}


class ConfigError(ValueError):
    pass


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass
class ScenarioConfig:
    data: dict
    base_dir: Path

    @classmethod
    def load(cls, path, overrides=None):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(raw, path.parent, overrides)

    @classmethod
    def from_dict(cls, raw, base_dir=".", overrides=None):
        unknown = set(raw) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = _merge(DEFAULTS, raw)
        if overrides:
            data = _merge(data, overrides)
        cfg = cls(data, Path(base_dir))
        cfg.validate()
        return cfg

    def path(self, key):
        v = self.data[key]
        if v is None:
            return None
        p = Path(v)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def coupling(self):
        return self.data["coupling"]

    def output_dir(self):
        p = Path(self.data["output"]["dir"])
        return p if p.is_absolute() else self.base_dir / p

    def validate(self):
        d = self.data
        for key in ("dtm", "hydrograph"):
            if d[key] is None:
                raise ConfigError(f"'{key}' is required")
        for key in ("dtm", "hydrograph", "mesh"):
            p = self.path(key)
            if p is not None and not p.is_file():
                raise ConfigError(f"{key} file not found: {p}")
        if not (isinstance(d["flood_threshold"], (int, float)) and d["flood_threshold"] >= 0):
            raise ConfigError("flood_threshold must be a nonnegative number")
        s = d["surface"]
        try:
            self.surface_config(np.zeros(0, dtype=int), np.zeros(0))
        except ValueError as exc:
            raise ConfigError(f"surface: {exc}") from None
        wf = s["waterfront"]
        if wf != "auto" and not (isinstance(wf, list) and all(isinstance(e, dict) for e in wf)):
            raise ConfigError("surface.waterfront must be 'auto' or a list of {zone, length[, delay]}")
        if not s["headroom"] > 0:
            raise ConfigError("surface.headroom must be positive")
        c = self.coupling
        if c not in ("off", "in_process") and not str(c).startswith("connect"):
            raise ConfigError("coupling must be 'off', 'in_process' or 'connect host:port'")
        if str(c).startswith("connect"):
            try:
                parse_endpoint(str(c).split(None, 1)[1])
            except (IndexError, ValueError) as exc:
                raise ConfigError(f"coupling: {exc}") from None
        sub = d["subsurface"]
        if self.coupling != "off":
            if sub["storage"] is None or sub["permeability"] is None:
                raise ConfigError("subsurface.storage and subsurface.permeability are required when coupled")
            try:
                self.porous_params()
            except ValueError as exc:
                raise ConfigError(f"subsurface: {exc}") from None
            if sub["dry_mode"] not in DRY_MODES:
                raise ConfigError(f"subsurface.dry_mode must be one of {DRY_MODES}")
            if sub["rate_mode"] not in RATE_MODES:
                raise ConfigError(f"subsurface.rate_mode must be one of {RATE_MODES}")
            if not (sub["depth"] > 0 and int(sub["nz"]) >= 2):
                raise ConfigError("subsurface.depth must be positive and nz >= 2")
        try:
            self.schedule()
        except ValueError as exc:
            raise ConfigError(f"schedule: {exc}") from None
        oi = d["output"]["interval"]
        k = oi / s["dt"] if s["dt"] else 0
        if not (oi > 0 and math.isclose(k, round(k)) and round(k) >= 1):
            raise ConfigError("output.interval must be a positive multiple of surface.dt")

    def surface_config(self, zones, lengths, delays=None):
        s = self.data["surface"]
        return SurfaceConfig(
            dt=s["dt"], law=s["law"], weir_coefficient=s["weir_coefficient"], manning_n=s["manning_n"],
            limiter_fraction=s["limiter_fraction"], waterfront_zones=zones, waterfront_lengths=lengths,
            waterfront_delay=delays, flood_threshold=self.data["flood_threshold"],
            surcharge_area=s["surcharge_area"],
        )

    def porous_params(self):
        sub = self.data["subsurface"]
        return PorousParams(sub["storage"], sub["permeability"], sub["viscosity"], sub["density"], sub["g"])

    def schedule(self):
        sc = self.data["schedule"]
        sub_dt = self.data["subsurface"]["dt"] if self.coupling != "off" else sc["coupling_interval"]
        return CouplingSchedule(self.data["surface"]["dt"], sub_dt, sc["coupling_interval"], sc["end_time"])


class Scenario:
    """All models for one configuration, built once."""

    def __init__(self, config):
        self.config = config
        d = config.data
        self.dtm = read_ascii_grid(config.path("dtm"))
        if config.path("mesh") is not None:
            self.mesh = load_mesh(config.path("mesh"))
            if self.mesh.shape != self.dtm.shape:
                raise ConfigError("mesh and DTM have different shapes")
        else:
            self.mesh = delineate_zones(self.dtm, d["surface"]["merge_eps"], d["surface"]["headroom"])
        self.hydrograph = Hydrograph.from_csv(config.path("hydrograph"))
        wf = d["surface"]["waterfront"]
        if wf == "auto":
            zones, lengths = waterfront_zones(self.mesh, self.dtm)
            delays = None
        else:
            zones = np.array([e["zone"] for e in wf], dtype=np.int64)
            lengths = np.array([e["length"] for e in wf], dtype=np.float64)
            delays = np.array([e.get("delay", 0.0) for e in wf], dtype=np.float64)
            if np.any((zones < 0) | (zones >= self.mesh.n_zones)):
                raise ConfigError("waterfront zone id out of range")
        self.surface_config = config.surface_config(zones, lengths, delays)
        self.schedule = config.schedule()
        if self.schedule.end_time > self.hydrograph.times[-1] or self.hydrograph.times[0] > 0:
            raise ConfigError("hydrograph does not cover [0, end_time]")
        self._grid = None
        self._zone_map = None

    def surface_model(self):
        return SurfaceModel(self.mesh, self.surface_config, self.hydrograph)

    def subsurface_model(self):
        sub = self.config.data["subsurface"]
        nz = int(sub["nz"])
        c = sub["coarsen"] or default_coarsening(self.dtm, nz)
        grid = build_grid(self.dtm, sub["depth"], nz, self.config.porous_params(), coarsen=c, tol=sub["tol"])
        zmap = ColumnZoneMap(self.mesh, self.dtm, grid)
        self._grid, self._zone_map = grid, zmap
        return SubsurfaceModel(grid, zmap, sub["dt"], sub["dry_mode"], sub["rate_mode"])


# ---------------------------------------------------------------------------
# running and writing outputs
# ---------------------------------------------------------------------------

def _fmt(v):
    return repr(float(v))


class RunWriter:
    """Writes frames, zone time series and the mass-balance log as a run goes."""

    def __init__(self, out_dir, scenario, coupled):
        self.out = Path(out_dir)
        self.frames = self.out / "frames"
        self.frames.mkdir(parents=True, exist_ok=True)
        self.scenario = scenario
        self.coupled = coupled
        self.zones_f = open(self.out / "zones.csv", "w", newline="")
        self.zones = csv.writer(self.zones_f)
        self.zones.writerow(["t", "zone", "level", "volume", "discharge", "velocity", "surcharge_rate"])
        self.mb_f = open(self.out / "mass_balance.csv", "w", newline="")
        self.mb = csv.writer(self.mb_f)
        self.mb.writerow(["t", "total_volume", "initial", "inflow", "surcharge", "clipped", "relative_error"])
        self.frame_times = []
        self.zone_map = None

    def __call__(self, t, state, rates, h_filtr):
        sc = self.scenario
        tag = f"{int(round(t)):08d}"
        depth = depth_raster(state, sc.mesh, sc.dtm)
        save_ascii_grid(depth, self.frames / f"depth_{tag}.asc")
        if self.coupled:
            hf = np.zeros(sc.dtm.shape)
            if h_filtr is not None and self.zone_map is not None:
                hf = self.zone_map.columns_to_raster(h_filtr)
            save_ascii_grid(sc.dtm.with_values(hf), self.frames / f"hfiltr_{tag}.asc")
            save_ascii_grid(sc.dtm.with_values(np.where(sc.dtm.mask, 0.0, depth.elevation) + hf),
                            self.frames / f"htotal_{tag}.asc")
        self.frame_times.append(t)
        for k in range(sc.mesh.n_zones):
            self.zones.writerow([_fmt(t), k, _fmt(state.level[k]), _fmt(state.volume[k]),
                                 _fmt(state.discharge[k]), _fmt(state.velocity[k]), _fmt(rates[k])])
        self.mb.writerow([_fmt(t), _fmt(state.volume.sum()), _fmt(state.initial_total),
                          _fmt(state.inflow_total), _fmt(state.surcharge_total),
                          _fmt(state.clipped_total), _fmt(state.balance_error())])

    def close(self):
        self.zones_f.close()
        self.mb_f.close()


def run_scenario(config, out_dir=None, coupling=None, until=None, output_interval=None):
    """Execute a scenario and write its outputs; returns ``(status, CoupledRun)``.

    ``status`` is the process exit code: 0 ok, 3 numerical failure, 4 peer
    failure. Configuration errors raise :class:`ConfigError` before any
    output is written.
    """
    overrides = {}
    if until is not None:
        overrides.setdefault("schedule", {})["end_time"] = float(until)
    if output_interval is not None:
        overrides.setdefault("output", {})["interval"] = float(output_interval)
    if coupling is not None:
        overrides["coupling"] = coupling
    if overrides:
        config = ScenarioConfig.from_dict(_merge(config.data, overrides), config.base_dir)
    scenario = Scenario(config)
    out = Path(out_dir) if out_dir is not None else config.output_dir()
    mode = config.coupling
    coupled = mode != "off"

    start = time.perf_counter()
    writer = RunWriter(out, scenario, coupled)
    surface = scenario.surface_model()
    interval = config.data["output"]["interval"]
    solver_rows = []
    try:
        if mode == "off":
            run = run_uncoupled(surface, scenario.schedule, interval, writer)
        elif mode == "in_process":
            model = scenario.subsurface_model()
            writer.zone_map = scenario._zone_map
            run = run_coupled(surface, LocalSubsurface(model), scenario.schedule, interval, writer)
            solver_rows = model.grid.solver_log
        else:
            endpoint = mode.split(None, 1)[1]
            model = scenario.subsurface_model()  # geometry only: column map for rasters
            writer.zone_map = scenario._zone_map
            remote = RemoteSubsurface(endpoint, scenario.mesh.n_zones, model.n_columns, config.data["timeout"])
            run = run_coupled(surface, remote, scenario.schedule, interval, writer)
    finally:
        writer.close()
    wall = time.perf_counter() - start

    if solver_rows:
        write_solver_log(out / "solver.csv", solver_rows)
    status = {"ok": 0, "numerical_failure": 3, "peer_failure": 4}[run.status]
    manifest = {
        "izflood_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": __import__("scipy").__version__,
        "config": config.data,
        "config_dir": str(config.base_dir.resolve()),
        "dtm": str(config.path("dtm").resolve()),
        "zones": scenario.mesh.n_zones,
        "edges": scenario.mesh.n_edges,
        "frames": [int(round(t)) for t in writer.frame_times],
        "status": run.status,
        "message": run.message,
        "exit_code": status,
        "wall_time_s": wall,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return status, run


def write_solver_log(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "iterations", "relative_residual"])
        for t, it, res in rows:
            w.writerow([_fmt(t), it, _fmt(res)])


def serve_scenario(config, listen, on_ready=None, out_dir=None):
    """Run the subsurface side of ``config`` as a TCP service; returns an exit code."""
    from .coupling import serve_subsurface

    scenario = Scenario(config)
    model = scenario.subsurface_model()
    out = Path(out_dir) if out_dir is not None else config.output_dir() / "subsurface"
    out.mkdir(parents=True, exist_ok=True)
    grid = model.grid
    zmap = scenario._zone_map

    def on_exchange(t, m):
        hf = zmap.columns_to_raster(m.h_filtr())
        tag = f"{int(round(t + scenario.schedule.interval)):08d}"
        save_ascii_grid(scenario.dtm.with_values(hf), out / f"hfiltr_{tag}.asc")

    def on_halt():
        write_solver_log(out / "solver.csv", grid.solver_log)

    return serve_subsurface(listen, model, timeout=config.data["timeout"], on_ready=on_ready,
                            on_exchange=on_exchange, on_halt=on_halt)


# ---------------------------------------------------------------------------
# bundled test scenario
# ---------------------------------------------------------------------------

ISLAND_DEFAULTS = {
    "size": 41,
    "cellsize": 25.0,
    "peak_level": 1.8,
    "rise_time": 3600.0,
    "end_time": 4 * 3600.0,
    "storage": 1.0e-8,
    "permeability": 1.0e-9,
}


def write_island_scenario(directory, coupling="in_process", **params):
    """Write an island-with-lowered-center scenario (DTM, hydrograph, config).

    The sea rises linearly from 0 to ``peak_level`` over ``rise_time`` and
    then holds. The interior basin is ringed by a rim well above the peak,
    so only groundwater can reach it. Returns the config path.
    """
    from .terrain import synth_terrain

    unknown = set(params) - set(ISLAND_DEFAULTS)
    if unknown:
        raise ValueError(f"unknown island parameters: {sorted(unknown)}")
    p = {**ISLAND_DEFAULTS, **params}
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    dtm = synth_terrain("island_with_lowered_center", p["size"], p["size"], p["cellsize"])
    save_ascii_grid(dtm, d / "island.asc")
    hydro = Hydrograph([0.0, p["rise_time"], max(p["end_time"], p["rise_time"]) + 3600.0],
                       [0.0, p["peak_level"], p["peak_level"]])
    hydro.to_csv(d / "sea_level.csv")
    cfg = {
        "dtm": "island.asc",
        "hydrograph": "sea_level.csv",
        "flood_threshold": 1.30,
        "surface": {"dt": 10.0},
        "subsurface": {"storage": p["storage"], "permeability": p["permeability"],
                       "depth": 20.0, "nz": 10, "coarsen": 1, "dt": 60.0},
        "schedule": {"coupling_interval": 60.0, "end_time": p["end_time"]},
        "output": {"dir": "out", "interval": 600.0},
        "coupling": coupling,
    }
    path = d / "scenario.json"
    path.write_text(json.dumps(cfg, indent=2))
    return path
