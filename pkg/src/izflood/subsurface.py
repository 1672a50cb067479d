"""Transient Darcy flow in the porous layer under the city.

The unknown is the piezometric potential ``phi = p + rho*g*z`` on a
cell-centred finite-volume grid of vertical columns (one per, optionally
coarsened, DTM block) with ``nz`` terrain-following layers. Storage form::

    S dphi/dt - div(K/mu grad phi) = 0

is linear, so each backward-Euler step is a single SPD solve. Faces use the
harmonic mean of ``K/mu``.

Boundaries:

* top face of a flooded column: pressure ``rho*g*h_in`` at the ground;
* top face of a dry column: ``zero_head`` pins the water table at the
  reference level (``p = -rho*g*z_top``); ``no_flow`` is impermeable except
  where groundwater reaches the ground, which then acts as a seepage face
  (``p = 0``, outflow only, switched with a one-step lag);
* lateral faces towards inactive (nodata) columns are embankments carrying
  the adjacent water level (the reference level when dry);
* bottom: impermeable unless ``bottom_head`` is set;
* outer grid sides: no flow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .solvers import ColumnPreconditioner, SolveInfo, solve_spd

DRY_MODES = ("no_flow", "zero_head")
RATE_MODES = ("flux", "dh")


@dataclass(frozen=True)
class PorousParams:
    """Storage ``S`` (1/Pa), permeability ``K_S`` (m², scalar or per-cell),
    viscosity ``mu`` (Pa·s), density ``rho`` (kg/m³), gravity ``g`` (m/s²)."""

    storage: float
    permeability: float | np.ndarray
    viscosity: float = 1.0e-3
    density: float = 1000.0
    g: float = 9.81

    def __post_init__(self):
        for name in ("storage", "viscosity", "density", "g"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not np.all(np.asarray(self.permeability) > 0):
            raise ValueError("permeability must be positive")

    @property
    def rho_g(self):
        return self.density * self.g

    def diffusivity(self):
        return float(np.max(self.permeability)) / (self.viscosity * self.storage)


@dataclass
class SurfaceBC:
    """Overland water depth (m) per grid column, 0 where dry."""

    h_in: np.ndarray
    dry_mode: str = "no_flow"
    embankment_level: float = 0.0

    def __post_init__(self):
        self.h_in = np.asarray(self.h_in, dtype=np.float64)
        if self.dry_mode not in DRY_MODES:
            raise ValueError(f"dry_mode must be one of {DRY_MODES}")
        if np.any(self.h_in < 0) or not np.all(np.isfinite(self.h_in)):
            raise ValueError("h_in must be finite and nonnegative")


def _harmonic(a, b):
    return 2.0 * a * b / (a + b)


class SubsurfaceGrid:
    """Structured column grid, its assembled operator and the pressure state.

    Cells are numbered ``column * nz + layer`` with layer 0 at the top;
    active columns are numbered row-major over the ``(ny, nx)`` footprint.
    """

    def __init__(self, z_top, dx, depth, nz, params, bottom_head=None, embankments=True,
                 coarsen=1, tol=1e-10):
        z_top = np.asarray(z_top, dtype=np.float64)
        if not depth > 0:
            raise ValueError("depth must be positive")
        if nz < 2:
            raise ValueError("need at least two layers")
        self.active = np.isfinite(z_top)
        if not self.active.any():
            raise ValueError("no active columns")
        self.ny, self.nx = z_top.shape
        self.nz = int(nz)
        self.dx = float(dx)
        self.depth = float(depth)
        self.dz = self.depth / self.nz
        self.params = params
        self.bottom_head = bottom_head
        self.coarsen = int(coarsen)
        self.tol = tol

        cid = np.full(z_top.shape, -1, dtype=np.int64)
        cid[self.active] = np.arange(int(self.active.sum()))
        self.column_id = cid
        self.ncol = int(self.active.sum())
        self.n = self.ncol * self.nz
        self.z_top = z_top[self.active]
        self.z_center = self.z_top[:, None] - (np.arange(self.nz) + 0.5) * self.dz
        self.area = self.dx * self.dx
        self.cell_volume = self.area * self.dz

        kmu = np.broadcast_to(np.asarray(params.permeability, dtype=np.float64) / params.viscosity,
                              (self.ny, self.nx, self.nz))[self.active]
        self.kmu = np.ascontiguousarray(kmu)

        # interior connections: (cell_i, cell_j, transmissibility [m³/(Pa·s)])
        idx = np.arange(self.n).reshape(self.ncol, self.nz)
        ci = [idx[:, :-1].ravel()]
        cj = [idx[:, 1:].ravel()]
        ct = [(_harmonic(kmu[:, :-1], kmu[:, 1:]) * self.area / self.dz).ravel()]
        pairs = []
        for a, b in ((cid[:, :-1], cid[:, 1:]), (cid[:-1, :], cid[1:, :])):
            sel = (a >= 0) & (b >= 0)
            pairs.append(np.column_stack((a[sel], b[sel])))
        self.hpairs = np.concatenate(pairs)
        pa, pb = self.hpairs[:, 0], self.hpairs[:, 1]
        self.t_h = _harmonic(kmu[pa], kmu[pb]) * self.dz  # area dx*dz over distance dx
        ci.append(idx[pa].ravel())
        cj.append(idx[pb].ravel())
        ct.append(self.t_h.ravel())
        self.t_v = ct[0].reshape(self.ncol, self.nz - 1)
        ci, cj, ct = np.concatenate(ci), np.concatenate(cj), np.concatenate(ct)
        offd = sp.coo_matrix((-ct, (ci, cj)), shape=(self.n, self.n))
        diag = np.bincount(ci, weights=ct, minlength=self.n) + np.bincount(cj, weights=ct, minlength=self.n)
        self.laplacian = (offd + offd.T + sp.diags(diag)).tocsr()

        # boundary transmissibilities (half-cell distance)
        self.t_top = kmu[:, 0] * self.area / (0.5 * self.dz)
        self.t_bottom = kmu[:, -1] * self.area / (0.5 * self.dz)
        n_emb = np.zeros(self.ncol)
        if embankments:
            ny, nx = cid.shape
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                r0, r1 = max(0, -dr), ny - max(0, dr)
                c0, c1 = max(0, -dc), nx - max(0, dc)
                here = cid[r0:r1, c0:c1]
                there = cid[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
                sel = (here >= 0) & (there < 0)
                np.add.at(n_emb, here[sel], 1.0)
        self.n_embankment = n_emb
        self.t_emb = n_emb[:, None] * kmu * (self.dx * self.dz) / (0.5 * self.dx)

        # hydrostatic initial state: water table at the reference level
        self.phi = np.zeros(self.n)
        self.t = 0.0
        self.seepage = np.zeros(self.ncol, dtype=bool)
        self.last = None
        self.solver_log = []

    # -- derived fields -------------------------------------------------------

    @property
    def p(self):
        return (self.phi.reshape(self.ncol, self.nz) - self.params.rho_g * self.z_center)

    def surface_pressure(self):
        """Ground-surface pressure, linearly extrapolated from the two top layers."""
        f = self.phi.reshape(self.ncol, self.nz)
        phi_s = f[:, 0] + 0.5 * (f[:, 0] - f[:, 1])
        return phi_s - self.params.rho_g * self.z_top

    def to_columns(self, values, fill=0.0):
        """Scatter per-active-column values onto the ``(ny, nx)`` footprint."""
        out = np.full((self.ny, self.nx), fill, dtype=np.float64)
        out[self.active] = values
        return out

    # -- stepping ---------------------------------------------------------------

    def _boundary(self, bc):
        rg = self.params.rho_g
        h = np.asarray(bc.h_in, dtype=np.float64)
        h = h[self.active] if h.shape == (self.ny, self.nx) else h
        if h.shape != (self.ncol,):
            raise ValueError(f"h_in must have shape {(self.ny, self.nx)} or ({self.ncol},)")
        flooded = h > 0
        t_top = np.zeros(self.ncol)
        phi_top = np.zeros(self.ncol)
        t_top[flooded] = self.t_top[flooded]
        phi_top[flooded] = rg * (self.z_top[flooded] + h[flooded])
        dry = ~flooded
        if bc.dry_mode == "zero_head":
            t_top[dry] = self.t_top[dry]
            phi_top[dry] = 0.0
            seep = np.zeros(self.ncol, dtype=bool)
        else:
            ps = self.surface_pressure()
            still_out = np.zeros(self.ncol, dtype=bool)
            if self.last is not None:
                still_out = self.seepage & (self.last["top_inflow"] < 0)
            seep = dry & ((ps > 0) | still_out)
            t_top[seep] = self.t_top[seep]
            phi_top[seep] = rg * self.z_top[seep]
        phi_emb = np.where(flooded, rg * (self.z_top + h), rg * bc.embankment_level)
        return flooded, seep, t_top, phi_top, phi_emb

    def step(self, bc, dt):
        """Backward-Euler step of length ``dt`` (``inf`` gives the steady state)."""
        if not dt > 0:
            raise ValueError("dt must be positive")
        nz = self.nz
        flooded, seep, t_top, phi_top, phi_emb = self._boundary(bc)
        d_bc = self.t_emb.copy()
        rhs_bc = self.t_emb * phi_emb[:, None]
        d_bc[:, 0] += t_top
        rhs_bc[:, 0] += t_top * phi_top
        phi_bot = None
        if self.bottom_head is not None:
            phi_bot = self.params.rho_g * self.bottom_head
            d_bc[:, -1] += self.t_bottom
            rhs_bc[:, -1] += self.t_bottom * phi_bot
        d_bc = d_bc.ravel()
        rhs_bc = rhs_bc.ravel()
        storage = 0.0 if math.isinf(dt) else self.params.storage * self.cell_volume / dt
        A = (self.laplacian + sp.diags(storage + d_bc)).tocsr()
        # solve for the increment so the residual is measured against fluxes
        rhs = rhs_bc - d_bc * self.phi - self.laplacian @ self.phi
        delta, info = solve_spd(A, rhs, tol=self.tol, precond=ColumnPreconditioner(A, nz))
        phi_old = self.phi
        self.phi = phi_old + delta
        f = self.phi.reshape(self.ncol, nz)
        top_in = t_top * (phi_top - f[:, 0])
        emb_in = self.t_emb * (phi_emb[:, None] - f)
        bot_in = np.zeros(self.ncol) if phi_bot is None else self.t_bottom * (phi_bot - f[:, -1])
        self.seepage = seep
        self.last = {
            "dt": dt, "phi_old": phi_old, "flooded": flooded, "t_top": t_top, "phi_top": phi_top,
            "phi_emb": phi_emb, "phi_bot": phi_bot, "top_inflow": top_in,
            "emb_inflow": emb_in, "bottom_inflow": bot_in,
        }
        self.t += dt
        self.solver_log.append((self.t, info.iterations, info.residual))
        return info

    # -- fluxes -----------------------------------------------------------------

    def boundary_inflow(self):
        """Total inflow (m³/s) through all boundary faces during the last step."""
        L = self.last
        return float(L["top_inflow"].sum() + L["emb_inflow"].sum() + L["bottom_inflow"].sum())


def build_grid(dtm, depth, nz, params, coarsen=1, bottom_head=None, embankments=True, tol=1e-10):
    """Column grid under ``dtm`` with ``coarsen x coarsen`` cells per column.

    Column top elevation is the mean of its valid DTM cells; columns with no
    valid cell are inactive. The initial state is hydrostatic with the water
    table at the reference level (``p = -rho*g*z``).
    """
    c = int(coarsen)
    if c < 1:
        raise ValueError("coarsen must be >= 1")
    nr, nc = dtm.shape
    ny, nx = -(-nr // c), -(-nc // c)
    valid = dtm.valid
    zsum = np.zeros((ny, nx))
    cnt = np.zeros((ny, nx))
    rr, cc = np.nonzero(valid)
    np.add.at(zsum, (rr // c, cc // c), dtm.elevation[rr, cc])
    np.add.at(cnt, (rr // c, cc // c), 1.0)
    if not cnt.any():
        raise ValueError("raster has no valid cells")
    with np.errstate(invalid="ignore", divide="ignore"):
        z_top = np.where(cnt > 0, zsum / cnt, np.nan)
    return SubsurfaceGrid(z_top, dtm.cellsize * c, depth, nz, params, bottom_head, embankments, c, tol)


def default_coarsening(dtm, nz, target_cells=50_000):
    n_valid = int(dtm.valid.sum())
    return max(1, int(round(math.sqrt(n_valid * nz / target_cells))))


def step_subsurface(grid, bc, dt):
    grid.step(bc, dt)
    return grid


@dataclass
class DarcyField:
    """Face velocities (m/s) of the last step.

    ``vertical[col, k]`` is the upward velocity through the top face of layer
    ``k`` (``k = nz`` is the bottom face); ``horizontal[f, k]`` flows from
    ``hpairs[f, 0]`` to ``hpairs[f, 1]``; ``embankment[col, k]`` is the total
    outward velocity summed over a cell's embankment faces (per face area).
    """

    vertical: np.ndarray
    horizontal: np.ndarray
    hpairs: np.ndarray
    embankment: np.ndarray
    face_area_v: float
    face_area_h: float

    def net_outflow(self):
        """Net outward volume flux (m³/s) per cell, shape ``(ncol, nz)``."""
        ncol, nzp1 = self.vertical.shape
        nz = nzp1 - 1
        qv = self.vertical * self.face_area_v
        out = qv[:, :-1] - qv[:, 1:]
        qh = self.horizontal * self.face_area_h
        hp = self.hpairs
        np.add.at(out, hp[:, 0], qh)
        np.subtract.at(out, hp[:, 1], qh)
        return out + self.embankment * self.face_area_h


def darcy_velocity(grid):
    """Darcy velocities ``V = -(K/mu) grad(p + rho g z)`` on all faces.

    Uses the same transmissibilities as the assembled operator, so the
    discrete divergence of the returned field balances storage exactly.
    """
    if grid.last is None:
        raise ValueError("grid has not been stepped yet")
    L = grid.last
    f = grid.phi.reshape(grid.ncol, grid.nz)
    A = grid.area
    vert = np.zeros((grid.ncol, grid.nz + 1))
    vert[:, 0] = -L["top_inflow"] / A
    vert[:, 1:-1] = grid.t_v * (f[:, 1:] - f[:, :-1]) / A
    vert[:, -1] = L["bottom_inflow"] / A
    ah = grid.dx * grid.dz
    hp = grid.hpairs
    horiz = grid.t_h * (f[hp[:, 0]] - f[hp[:, 1]]) / ah
    emb = -L["emb_inflow"] / ah
    return DarcyField(vert, horiz, hp, emb, A, ah)


def h_filtr_field(grid, h_in=None):
    """Surcharge depth ``max(p_surface, 0) / (rho g)`` per column, shape ``(ny, nx)``.

    With ``h_in`` (per active column) only the excess over the overland depth
    is reported, so that ``h_in + h_filtr`` does not count ponded water twice.
    """
    hf = np.maximum(grid.surface_pressure(), 0.0) / grid.params.rho_g
    if h_in is not None:
        hf = np.maximum(hf - np.asarray(h_in, dtype=np.float64), 0.0)
    return grid.to_columns(hf)


def h_total_field(h_in, h_filtr):
    h_in = np.asarray(h_in, dtype=np.float64)
    h_filtr = np.asarray(h_filtr, dtype=np.float64)
    if h_in.shape != h_filtr.shape:
        raise ValueError(f"shape mismatch: {h_in.shape} vs {h_filtr.shape}")
    return h_in + h_filtr


class ColumnZoneMap:
    """Links DTM cells, Impact Zones and subsurface columns.

    ``to_columns`` averages cell depths into column ``h_in``; ``rates``
    spreads column surface fluxes over member cells and sums them per zone,
    so that ``sum(rate_k * plan_area_k)`` equals the total column flux.
    """

    def __init__(self, mesh, dtm, grid):
        c = grid.coarsen
        lab = mesh.labels
        valid = lab >= 0
        rr, cc = np.nonzero(valid)
        self.rows, self.cols = rr, cc
        self.cell_zone = lab[rr, cc]
        self.cell_z = dtm.elevation[rr, cc]
        col = grid.column_id[rr // c, cc // c]
        if np.any(col < 0):
            raise ValueError("zone map and grid disagree on active cells")
        self.cell_col = col
        ncell = rr.size
        n_member = np.bincount(col, minlength=grid.ncol).astype(float)
        self.cells_to_columns = sp.csr_matrix(
            (1.0 / n_member[col], (col, np.arange(ncell))), shape=(grid.ncol, ncell))
        # column flux (m/s) -> zone rate (m/s); column area spread over members
        w = grid.area / n_member[col] / mesh.plan_area[self.cell_zone]
        self.columns_to_zones = sp.csr_matrix(
            (w, (self.cell_zone, col)), shape=(mesh.n_zones, grid.ncol))
        self.n_zones = mesh.n_zones
        self.ncol = grid.ncol
        self.plan_area = mesh.plan_area
        self.shape = dtm.shape
        self.coarsen = c

    def cell_depths(self, levels):
        return np.maximum(np.asarray(levels)[self.cell_zone] - self.cell_z, 0.0)

    def column_depths(self, levels):
        return self.cells_to_columns @ self.cell_depths(levels)

    def zone_rates(self, column_flux):
        return self.columns_to_zones @ column_flux

    def columns_to_raster(self, values):
        """Broadcast per-column values to DTM cells (0 elsewhere)."""
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = np.asarray(values)[self.cell_col]
        return out


def surcharge_rates(grid, zone_map, h_filtr_before=None, mode="flux", dt=None):
    """Per-zone rate of water-level change (m/s) fed by the subsurface.

    ``flux`` mode: area-weighted upward Darcy flux through the ground, counted
    on flooded, seeping or positive-``h_filtr`` columns (negative on flooded
    columns that infiltrate). ``dh`` mode: growth of ``h_filtr`` over the
    last step.
    """
    if mode not in RATE_MODES:
        raise ValueError(f"mode must be one of {RATE_MODES}")
    L = grid.last
    if L is None:
        return np.zeros(zone_map.n_zones)
    hf = h_filtr_field(grid)[grid.active]
    if mode == "dh":
        if h_filtr_before is None:
            raise ValueError("dh mode needs the previous h_filtr field")
        dt = L["dt"] if dt is None else dt
        q = np.maximum(hf - np.asarray(h_filtr_before), 0.0) / dt
    else:
        counted = L["flooded"] | grid.seepage | (hf > 0)
        q = np.where(counted, -L["top_inflow"] / grid.area, 0.0)
    return zone_map.zone_rates(q)


class SubsurfaceModel:
    """Subsurface side of the coupling: zone levels in, zone surcharge rates out."""

    def __init__(self, grid, zone_map, dt, dry_mode="no_flow", rate_mode="flux"):
        if dry_mode not in DRY_MODES:
            raise ValueError(f"dry_mode must be one of {DRY_MODES}")
        if rate_mode not in RATE_MODES:
            raise ValueError(f"rate_mode must be one of {RATE_MODES}")
        self.grid = grid
        self.zone_map = zone_map
        self.dt = float(dt)
        self.dry_mode = dry_mode
        self.rate_mode = rate_mode
        self.h_in = np.zeros(grid.ncol)

    @property
    def n_zones(self):
        return self.zone_map.n_zones

    @property
    def n_columns(self):
        return self.grid.ncol

    def advance(self, levels, duration):
        """Hold the overland levels fixed and advance ``duration`` seconds.

        Returns per-zone rates averaged over the interval.
        """
        g = self.grid
        n_steps = int(round(duration / self.dt))
        if n_steps < 1 or not math.isclose(n_steps * self.dt, duration, rel_tol=1e-12):
            raise ValueError(f"duration {duration} is not a multiple of dt {self.dt}")
        self.h_in = self.zone_map.column_depths(levels)
        bc = SurfaceBC(self.h_in, self.dry_mode)
        hf0 = h_filtr_field(g)[g.active]
        flux = np.zeros(g.ncol)
        for _ in range(n_steps):
            g.step(bc, self.dt)
            counted = g.last["flooded"] | g.seepage | (h_filtr_field(g)[g.active] > 0)
            flux += np.where(counted, -g.last["top_inflow"] / g.area, 0.0)
        if self.rate_mode == "dh":
            return self.zone_map.zone_rates(
                np.maximum(h_filtr_field(g)[g.active] - hf0, 0.0) / duration)
        return self.zone_map.zone_rates(flux / n_steps)

    def h_filtr(self):
        """Surcharge depth above the current overland depth, per column."""
        return h_filtr_field(self.grid, self.h_in)[self.grid.active]
