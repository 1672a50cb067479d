"""Rapid flood spreading over Impact Zones.

Water moves between adjacent zones once per constant time step, driven by a
weir or Manning discharge law across each zone edge. An explicit step is
kept stable by capping every edge transfer at a fraction of the donor volume
and at the volume that would equalize the two levels.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .izmesh import LevelOverflowError
from .terrain import DtmRaster

G = 9.81
WEIR_LAWS = ("weir", "manning")
SURCHARGE_AREA = ("auto", "plan", "wetted")


class HydrographRangeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# discharge laws
# ---------------------------------------------------------------------------

def weir_discharge(h_a, h_b, crest, length, cd=0.6, g=G):
    """Broad-crested weir discharge from level ``h_a`` towards ``h_b`` (m³/s).

    Free flow ``Q = 2/3 * cd * sqrt(2g) * length * H**1.5`` with ``H`` the
    upstream head over the crest, reduced by ``(1 - (H_down/H_up)**1.5)**0.385``
    when the downstream side is also above the crest. Positive when water
    flows a -> b.
    """
    h_a = np.asarray(h_a, dtype=np.float64)
    h_b = np.asarray(h_b, dtype=np.float64)
    up = np.maximum(h_a, h_b)
    down = np.minimum(h_a, h_b)
    head_up = np.maximum(up - crest, 0.0)
    head_down = np.maximum(down - crest, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(head_up > 0, head_down / head_up, 0.0)
    submerged = np.power(np.maximum(1.0 - ratio**1.5, 0.0), 0.385)
    q = (2.0 / 3.0) * cd * np.sqrt(2.0 * g) * length * head_up**1.5 * submerged
    q = np.where(h_a > h_b, q, np.where(h_a < h_b, -q, 0.0))
    return q if q.ndim else float(q)


def manning_discharge(h_a, h_b, crest, length, distance, n=0.05):
    """Wide-channel Manning discharge from ``h_a`` towards ``h_b`` (m³/s).

    Depth is the higher level over the crest, slope the level difference
    over ``distance``.
    """
    h_a = np.asarray(h_a, dtype=np.float64)
    h_b = np.asarray(h_b, dtype=np.float64)
    depth = np.maximum(np.maximum(h_a, h_b) - crest, 0.0)
    slope = np.abs(h_a - h_b) / distance
    q = length * depth ** (5.0 / 3.0) * np.sqrt(slope) / n
    q = np.where(h_a > h_b, q, np.where(h_a < h_b, -q, 0.0))
    return q if q.ndim else float(q)


# ---------------------------------------------------------------------------
# inputs and state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Hydrograph:
    """Piecewise-linear sea level (m) against time (s)."""

    times: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        h = np.asarray(self.levels, dtype=np.float64)
        if t.ndim != 1 or t.shape != h.shape or t.size == 0:
            raise ValueError("hydrograph needs matching 1-D times and levels")
        if np.any(np.diff(t) <= 0):
            raise ValueError("hydrograph times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "levels", h)

    @classmethod
    def constant(cls, level, t_end, t_start=0.0):
        return cls(np.array([t_start, t_end]), np.array([level, level]))

    def level_at(self, t):
        if t < self.times[0] or t > self.times[-1]:
            raise HydrographRangeError(
                f"t={t} s outside hydrograph range [{self.times[0]}, {self.times[-1]}]")
        return float(np.interp(t, self.times, self.levels))

    @classmethod
    def from_csv(cls, path):
        """Read ``t_seconds,level_m`` rows; a non-numeric first row is a header."""
        rows = list(csv.reader(io.StringIO(Path(path).read_text())))
        data = []
        for i, row in enumerate(rows):
            if not row or not "".join(row).strip():
                continue
            try:
                data.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if i == 0:
                    continue
                raise ValueError(f"{path}: bad hydrograph row {i + 1}: {row!r}") from None
        t, h = zip(*data) if data else ((), ())
        return cls(np.array(t), np.array(h))

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t_seconds", "level_m"])
            for t, h in zip(self.times, self.levels):
                w.writerow([repr(float(t)), repr(float(h))])


@dataclass
class SurfaceConfig:
    dt: float = 10.0
    law: str = "weir"
    weir_coefficient: float = 0.6
    manning_n: float = 0.05
    limiter_fraction: float = 0.25
    waterfront_zones: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    waterfront_lengths: np.ndarray = field(default_factory=lambda: np.zeros(0))
    waterfront_delay: np.ndarray | None = None
    flood_threshold: float = 1.30
    surcharge_area: str = "auto"
    g: float = G

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.law not in WEIR_LAWS:
            raise ValueError(f"law must be one of {WEIR_LAWS}")
        if not 0 < self.weir_coefficient <= 1.5:
            raise ValueError("weir coefficient must lie in (0, 1.5]")
        if not self.manning_n > 0:
            raise ValueError("Manning n must be positive")
        if not 0 < self.limiter_fraction <= 0.5:
            raise ValueError("limiter fraction must lie in (0, 0.5]")
        if self.surcharge_area not in SURCHARGE_AREA:
            raise ValueError(f"surcharge_area must be one of {SURCHARGE_AREA}")
        self.waterfront_zones = np.asarray(self.waterfront_zones, dtype=np.int64)
        self.waterfront_lengths = np.asarray(self.waterfront_lengths, dtype=np.float64)
        if self.waterfront_zones.shape != self.waterfront_lengths.shape:
            raise ValueError("waterfront zone ids and lengths must match")
        if np.any(self.waterfront_lengths <= 0):
            raise ValueError("waterfront boundary lengths must be positive")
        if self.waterfront_delay is None:
            self.waterfront_delay = np.zeros(self.waterfront_zones.size)
        self.waterfront_delay = np.asarray(self.waterfront_delay, dtype=np.float64)


@dataclass
class SurfaceState:
    """Per-zone volumes/levels at time ``t`` plus cumulative ledgers (m³)."""

    t: float
    volume: np.ndarray
    level: np.ndarray
    discharge: np.ndarray
    velocity: np.ndarray
    initial_total: float
    inflow_total: float = 0.0
    surcharge_total: float = 0.0
    clipped_total: float = 0.0
    step: int = 0

    def copy(self):
        return SurfaceState(self.t, self.volume.copy(), self.level.copy(), self.discharge.copy(),
                            self.velocity.copy(), self.initial_total, self.inflow_total,
                            self.surcharge_total, self.clipped_total, self.step)

    def balance_error(self):
        """Relative mass-balance residual against the ledgers."""
        # clipped_total is the part of requested sinks that could not be met
        expected = self.initial_total + self.inflow_total + self.surcharge_total + self.clipped_total
        scale = max(abs(expected), float(np.sum(self.volume)), 1e-300)
        return abs(float(np.sum(self.volume)) - expected) / scale


def initial_state(mesh, volume=None, t=0.0):
    v = np.zeros(mesh.n_zones) if volume is None else np.array(volume, dtype=np.float64)
    if v.shape != (mesh.n_zones,) or np.any(v < 0):
        raise ValueError("initial volumes must be a nonnegative per-zone array")
    z = np.zeros(mesh.n_zones)
    return SurfaceState(float(t), v, mesh.tables.level(v), z, z.copy(), float(v.sum()))


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

def _edge_discharge(h, mesh, config):
    a, b = mesh.edge_a, mesh.edge_b
    if config.law == "weir":
        q = weir_discharge(h[a], h[b], mesh.crest, mesh.length, config.weir_coefficient, config.g)
    else:
        q = manning_discharge(h[a], h[b], mesh.crest, mesh.length, mesh.distance, config.manning_n)
    # level differences at rounding level are equilibrium, not flow
    tiny = 8.0 * np.finfo(np.float64).eps * np.maximum(np.maximum(np.abs(h[a]), np.abs(h[b])), 1.0)
    return np.where(np.abs(h[a] - h[b]) <= tiny, 0.0, q)


def equalization_volume(tables, donor, receiver, v_donor, v_receiver, h_donor, max_iter=100):
    """Volume that moved from donor to receiver would make the two levels equal.

    Newton iteration on the convex piecewise-linear pair storage curve started
    at the donor level approaches the common level from above, so the result
    never overshoots (it is exact once the right segment is found).
    """
    target = v_donor + v_receiver
    h = h_donor.copy()
    todo = np.arange(h.size)
    for _ in range(max_iter):
        vd, ad = tables.volume_area(h[todo], donor[todo])
        vr, ar = tables.volume_area(h[todo], receiver[todo])
        g = vd + vr - target[todo]
        slope = ad + ar
        step = np.where((g > 0) & (slope > 0), g / np.where(slope > 0, slope, 1.0), 0.0)
        h_new = h[todo] - step
        moved = h_new != h[todo]
        h[todo] = h_new
        todo = todo[moved]
        if todo.size == 0:
            break
    x = np.maximum(v_donor - tables.volume(h, donor), 0.0)
    # rounding can leave the donor a few ulps below the receiver: bisect back
    # towards zero transfer, which is known to keep the donor on top
    bad = tables.level(v_donor - x, donor) < tables.level(v_receiver + x, receiver)
    if bad.any():
        i = np.flatnonzero(bad)
        xi = x[i]
        for cut in (1e-15, 1e-13, 1e-11, 1e-9, 1e-7, 1e-5, 1e-3, 0.1, 1.0):
            trial = xi * (1.0 - cut)
            ok = tables.level(v_donor[i] - trial, donor[i]) >= tables.level(v_receiver[i] + trial, receiver[i])
            x[i] = np.where(ok, trial, x[i])
            i, xi = i[~ok], xi[~ok]
            if i.size == 0:
                break
    return x


def step_surface(state, mesh, config, inflow=None, sources=None):
    """Advance one time step; returns a new :class:`SurfaceState`.

    ``inflow`` (boundary) and ``sources`` (surcharge/sinks) are per-zone
    volumes (m³) added after the inter-zone transfer. Negative totals that
    would empty a zone are clipped and recorded in ``clipped_total``.
    """
    dt = config.dt
    tables = mesh.tables
    v = state.volume
    h = state.level
    n = mesh.n_zones

    q = _edge_discharge(h, mesh, config) if mesh.n_edges else np.zeros(0)
    active = np.flatnonzero(q != 0.0)
    transfer = np.zeros(q.size)
    donor = np.where(q > 0, mesh.edge_a, mesh.edge_b)
    receiver = np.where(q > 0, mesh.edge_b, mesh.edge_a)
    if active.size:
        d, r = donor[active], receiver[active]
        demand = np.abs(q[active]) * dt
        cap = config.limiter_fraction * v[d]
        x = np.minimum(demand, cap)
        need = x > 0
        if need.any():
            idx = np.flatnonzero(need)
            eq = equalization_volume(tables, d[idx], r[idx], v[d[idx]], v[r[idx]], h[d[idx]])
            x[idx] = np.minimum(x[idx], eq)
        transfer[active] = x
        out = np.bincount(donor, weights=transfer, minlength=n)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(out > v, v / out, 1.0)
        transfer *= scale[donor]

    new_v = v - np.bincount(donor, weights=transfer, minlength=n) \
        + np.bincount(receiver, weights=transfer, minlength=n)
    inflow_sum = 0.0
    source_sum = 0.0
    if inflow is not None:
        new_v = new_v + inflow
        inflow_sum = float(np.sum(inflow))
    if sources is not None:
        new_v = new_v + sources
        source_sum = float(np.sum(sources))
    clipped = np.where(new_v < 0, -new_v, 0.0)
    new_v = np.maximum(new_v, 0.0)

    try:
        new_h = tables.level(new_v)
    except LevelOverflowError as exc:
        raise LevelOverflowError(
            f"t={state.t + dt} s: {exc}; increase the table headroom",
            zone=exc.zone, excess=exc.excess) from None

    # per-edge and per-zone flow diagnostics over the step
    q_actual = np.where(q > 0, transfer, -transfer) / dt if q.size else q
    depth = np.maximum(np.maximum(h[mesh.edge_a], h[mesh.edge_b]) - mesh.crest, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        vel = np.where(depth > 0, np.abs(q_actual) / (mesh.length * depth), 0.0)
    aq = np.abs(q_actual)
    discharge = np.bincount(mesh.edge_a, weights=aq, minlength=n) \
        + np.bincount(mesh.edge_b, weights=aq, minlength=n)
    weighted = np.bincount(mesh.edge_a, weights=aq * vel, minlength=n) \
        + np.bincount(mesh.edge_b, weights=aq * vel, minlength=n)
    with np.errstate(divide="ignore", invalid="ignore"):
        velocity = np.where(discharge > 0, weighted / discharge, 0.0)

    return SurfaceState(
        t=state.t + dt,
        volume=new_v,
        level=new_h,
        discharge=discharge,
        velocity=velocity,
        initial_total=state.initial_total,
        inflow_total=state.inflow_total + inflow_sum,
        surcharge_total=state.surcharge_total + source_sum,
        clipped_total=state.clipped_total + float(clipped.sum()),
        step=state.step + 1,
    )


def boundary_inflow(hydrograph, state, config):
    """Per-zone volume (m³) entering from the sea over the next step.

    Waterfront zones exchange water with the sea (an infinite reservoir) over
    a weir whose crest is the flood threshold. Outflow back to the sea is
    limited like any other transfer.
    """
    n = state.volume.size
    out = np.zeros(n)
    zones = config.waterfront_zones
    if zones.size == 0:
        return out
    t0 = hydrograph.times[0]
    sea = np.array([hydrograph.level_at(max(state.t - d, t0)) for d in config.waterfront_delay])
    q = weir_discharge(sea, state.level[zones], config.flood_threshold, config.waterfront_lengths,
                       config.weir_coefficient, config.g)
    vol = q * config.dt
    vol = np.maximum(vol, -config.limiter_fraction * state.volume[zones])
    np.add.at(out, zones, vol)
    return out


def apply_surcharge_rates(state, rates, config, mesh):
    """Convert per-zone level-change rates (m/s) to volumes (m³) for one step.

    The area basis is the plan area for dry zones and the wetted area for
    flooded ones (``surcharge_area="auto"``). Sinks larger than the stored
    volume are clipped later by :func:`step_surface`.
    """
    rates = np.asarray(rates, dtype=np.float64)
    if rates.shape != (mesh.n_zones,) or not np.all(np.isfinite(rates)):
        raise ValueError("rates must be a finite per-zone array")
    plan = mesh.plan_area
    if config.surcharge_area == "plan":
        area = plan
    else:
        wetted = mesh.tables.area(state.level)
        if config.surcharge_area == "wetted":
            area = wetted
        else:
            area = np.where(state.volume > 0, wetted, plan)
    return rates * area * config.dt


def depth_raster(state, mesh, dtm):
    """Cell water depths ``max(0, zone level - z)`` as a raster (nodata kept)."""
    lab = mesh.labels
    valid = lab >= 0
    level = np.where(valid, state.level[np.where(valid, lab, 0)], 0.0)
    dry = np.where(valid, state.volume[np.where(valid, lab, 0)] <= 0, True)
    depth = np.where(dry, 0.0, np.maximum(level - dtm.elevation, 0.0))
    return DtmRaster(np.where(dtm.mask, dtm.nodata, depth), dtm.cellsize, dtm.xll, dtm.yll,
                     dtm.nodata, dtm.mask)


class SurfaceModel:
    """Owns a surface state and advances it with boundary and surcharge forcing."""

    def __init__(self, mesh, config, hydrograph=None, state=None):
        self.mesh = mesh
        self.config = config
        self.hydrograph = hydrograph
        self.state = initial_state(mesh) if state is None else state

    def step(self, rates=None):
        s = self.state
        inflow = boundary_inflow(self.hydrograph, s, self.config) if self.hydrograph is not None else None
        sources = apply_surcharge_rates(s, rates, self.config, self.mesh) if rates is not None else None
        self.state = step_surface(s, self.mesh, self.config, inflow, sources)
        return self.state

    def advance(self, n_steps, rates=None):
        for _ in range(n_steps):
            self.step(rates)
        return self.state

    def snapshot(self):
        return self.state.copy()
