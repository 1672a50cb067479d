"""Impact Zone preprocessing.

The DTM is partitioned into Impact Zones: every valid cell joins the zone of
the local minimum it reaches by 8-neighbour steepest descent. Flat areas
drain breadth-first towards their nearest lower outlet; flat areas with no
outlet are a single minimum. Each zone carries an exact piecewise-linear
level-volume table, and zones sharing a cell edge are linked by a
:class:`ZoneEdge` whose crest is the lowest pass between them.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .terrain import DtmRaster

DEFAULT_HEADROOM = 10.0
MESH_FORMAT = "izflood-mesh"
MESH_VERSION = 1

# neighbour offsets in lexicographic (row, col) order; ties go to the first
_OFFSETS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


class LevelOverflowError(ArithmeticError):
    """A level or volume left the range covered by a zone's table."""

    def __init__(self, message, zone=None, excess=0.0):
        super().__init__(message)
        self.zone = zone
        self.excess = excess


# ---------------------------------------------------------------------------
# level-volume tables
# ---------------------------------------------------------------------------

def _interp(x, x0, x1, y0, y1):
    return y0 + (x - x0) * ((y1 - y0) / (x1 - x0))


class LevelVolumeTable:
    """Piecewise-linear map between water level (m) and stored volume (m³).

    ``levels[0]`` is the zone bottom ``z_min`` with volume 0; volume is strictly
    increasing and convex in level.
    """

    def __init__(self, levels, volumes):
        self.levels = np.asarray(levels, dtype=np.float64)
        self.volumes = np.asarray(volumes, dtype=np.float64)
        if self.levels.shape != self.volumes.shape or self.levels.size < 2:
            raise ValueError("a table needs at least two (level, volume) breakpoints")

    @property
    def z_min(self):
        return float(self.levels[0])

    @property
    def max_level(self):
        return float(self.levels[-1])

    @property
    def max_volume(self):
        return float(self.volumes[-1])

    def volume_from_level(self, h):
        h = float(h)
        if h <= self.levels[0]:
            return 0.0
        if h > self.levels[-1]:
            raise LevelOverflowError(f"level {h} above table top {self.levels[-1]}",
                                     excess=h - self.levels[-1])
        i = min(int(np.searchsorted(self.levels, h, side="right")) - 1, self.levels.size - 2)
        return float(_interp(h, self.levels[i], self.levels[i + 1], self.volumes[i], self.volumes[i + 1]))

    def level_from_volume(self, volume):
        v = float(volume)
        if v < 0:
            raise ValueError(f"negative volume {v}")
        if v > self.volumes[-1]:
            raise LevelOverflowError(f"volume {v} exceeds table capacity {self.volumes[-1]}",
                                     excess=v - self.volumes[-1])
        i = min(int(np.searchsorted(self.volumes, v, side="right")) - 1, self.volumes.size - 2)
        return float(_interp(v, self.volumes[i], self.volumes[i + 1], self.levels[i], self.levels[i + 1]))

    def wetted_area(self, h):
        """dV/dh just below level ``h`` (0 at or below the zone bottom)."""
        h = float(h)
        if h <= self.levels[0]:
            return 0.0
        i = min(int(np.searchsorted(self.levels, h, side="left")) - 1, self.levels.size - 2)
        return float((self.volumes[i + 1] - self.volumes[i]) / (self.levels[i + 1] - self.levels[i]))

    def __len__(self):
        return self.levels.size


def volume_from_level(table, h):
    return table.volume_from_level(h)


def level_from_volume(table, volume):
    return table.level_from_volume(volume)


def build_level_volume_table(dtm, cells, top=None, headroom=DEFAULT_HEADROOM):
    """Exact table for the zone made of flat cell indices ``cells``.

    ``V(h) = sum(max(0, h - z_cell)) * cellsize**2`` has one breakpoint per
    distinct cell elevation, up to ``top`` (default: highest cell + headroom).
    """
    z = np.sort(dtm.elevation.ravel()[np.asarray(cells)])
    if z.size == 0:
        raise ValueError("zone has no cells")
    if top is None:
        top = z[-1] + headroom
    levels, volumes = _table_from_sorted(z, top, dtm.cell_area)
    return LevelVolumeTable(levels, volumes)


def _table_from_sorted(z, top, area):
    csum = np.concatenate(([0.0], np.cumsum(z)))
    first = np.concatenate(([True], z[1:] != z[:-1])) & (z < top)
    idx = np.flatnonzero(first)
    levels = z[idx]
    volumes = area * (idx * levels - csum[idx])
    below = z < top
    n = int(below.sum())
    vtop = area * (n * top - csum[n])
    levels, volumes = np.append(levels, top), np.append(volumes, vtop)
    volumes[0] = 0.0
    # elevations closer than float resolution give zero-volume segments; drop them
    keep = np.concatenate(([True], np.diff(volumes) > 0))
    return levels[keep], volumes[keep]


class TableSet:
    """All zone tables packed into flat arrays for vectorized evaluation.

    Zone ``k`` owns breakpoints ``offsets[k]:offsets[k+1]``.
    """

    def __init__(self, levels, volumes, offsets):
        self.levels = np.ascontiguousarray(levels, dtype=np.float64)
        self.volumes = np.ascontiguousarray(volumes, dtype=np.float64)
        self.offsets = np.ascontiguousarray(offsets, dtype=np.int64)
        self.start = self.offsets[:-1]
        self.last = self.offsets[1:] - 1
        owner = np.repeat(np.arange(len(self), dtype=np.float64), np.diff(self.offsets))
        self._level_key = owner + 1j * self.levels
        self._volume_key = owner + 1j * self.volumes

    def __len__(self):
        return self.start.size

    def table(self, k):
        s, e = self.offsets[k], self.offsets[k + 1]
        return LevelVolumeTable(self.levels[s:e], self.volumes[s:e])

    @property
    def z_min(self):
        return self.levels[self.start]

    @property
    def max_level(self):
        return self.levels[self.last]

    @property
    def max_volume(self):
        return self.volumes[self.last]

    def _segment(self, zones, x, xp, strict=False):
        # largest i in [start, last-1] with xp[i] <= x (xp[i] < x if strict).
        # Complex numbers sort lexicographically (real, then imaginary), so
        # zone + 1j*value is one globally sorted key for a single searchsorted.
        key = self._level_key if xp is self.levels else self._volume_key
        query = zones.astype(np.float64) + 1j * x
        i = np.searchsorted(key, query, side="left" if strict else "right") - 1
        return np.clip(i, self.start[zones], self.last[zones] - 1)

    def volume(self, h, zones=None):
        """Volumes at levels ``h`` (clamped to 0 below each zone bottom)."""
        zones = np.arange(len(self)) if zones is None else np.asarray(zones)
        h = np.asarray(h, dtype=np.float64)
        over = h > self.levels[self.last[zones]]
        if over.any():
            k = int(np.flatnonzero(over)[0])
            raise LevelOverflowError(
                f"zone {int(zones[k])}: level {h[k]} above table top {self.levels[self.last[zones[k]]]}",
                zone=int(zones[k]), excess=float(h[k] - self.levels[self.last[zones[k]]]))
        i = self._segment(zones, h, self.levels)
        v = _interp(h, self.levels[i], self.levels[i + 1], self.volumes[i], self.volumes[i + 1])
        return np.where(h <= self.levels[self.start[zones]], 0.0, v)

    def level(self, v, zones=None):
        """Inverse of :meth:`volume`; raises on volumes beyond a table."""
        zones = np.arange(len(self)) if zones is None else np.asarray(zones)
        v = np.asarray(v, dtype=np.float64)
        over = v > self.volumes[self.last[zones]]
        if over.any():
            k = int(np.flatnonzero(over)[0])
            excess = float(v[k] - self.volumes[self.last[zones[k]]])
            raise LevelOverflowError(
                f"zone {int(zones[k])}: volume exceeds table capacity by {excess} m3",
                zone=int(zones[k]), excess=excess)
        i = self._segment(zones, v, self.volumes)
        return _interp(v, self.volumes[i], self.volumes[i + 1], self.levels[i], self.levels[i + 1])

    def volume_area(self, h, zones):
        """Volume and wetted area at ``h`` from one segment lookup (no overflow check)."""
        i = self._segment(zones, h, self.levels, strict=True)
        l0, l1 = self.levels[i], self.levels[i + 1]
        v0, v1 = self.volumes[i], self.volumes[i + 1]
        a = (v1 - v0) / (l1 - l0)
        dry = h <= self.levels[self.start[zones]]
        return np.where(dry, 0.0, v0 + (h - l0) * a), np.where(dry, 0.0, a)

    def area(self, h, zones=None):
        """Wetted area dV/dh just below ``h``."""
        zones = np.arange(len(self)) if zones is None else np.asarray(zones)
        h = np.asarray(h, dtype=np.float64)
        i = self._segment(zones, h, self.levels, strict=True)
        a = (self.volumes[i + 1] - self.volumes[i]) / (self.levels[i + 1] - self.levels[i])
        return np.where(h <= self.levels[self.start[zones]], 0.0, a)


# ---------------------------------------------------------------------------
# zone / edge records and the mesh
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ImpactZone:
    id: int
    cells: np.ndarray
    z_min: float
    spill_elevation: float
    level_volume: LevelVolumeTable
    plan_area: float


@dataclass(frozen=True)
class ZoneEdge:
    zone_a: int
    zone_b: int
    crest_elevation: float
    boundary_length: float
    flow_distance: float


class ZoneMesh:
    """Impact Zones, their tables and the zone adjacency graph.

    Per-zone and per-edge quantities are held as arrays; :attr:`zones` and
    :attr:`edges` give record views.
    """

    def __init__(self, labels, cellsize, z_min, spill, n_cells, tables,
                 edge_a, edge_b, crest, length, distance, xll=0.0, yll=0.0, areas=None):
        self.labels = np.asarray(labels, dtype=np.int64)
        self.cellsize = float(cellsize)
        self.xll = float(xll)
        self.yll = float(yll)
        self.z_min = np.asarray(z_min, dtype=np.float64)
        self.spill = np.asarray(spill, dtype=np.float64)
        self.n_cells = np.asarray(n_cells, dtype=np.int64)
        self.tables = tables
        self.edge_a = np.asarray(edge_a, dtype=np.int64)
        self.edge_b = np.asarray(edge_b, dtype=np.int64)
        self.crest = np.asarray(crest, dtype=np.float64)
        self.length = np.asarray(length, dtype=np.float64)
        self.distance = np.asarray(distance, dtype=np.float64)
        # explicit plan areas for idealized zones that are not made of raster cells
        self._areas = None if areas is None else np.asarray(areas, dtype=np.float64)
        for a in (self.labels, self.z_min, self.spill, self.n_cells, self.edge_a,
                  self.edge_b, self.crest, self.length, self.distance):
            a.setflags(write=False)

    @property
    def n_zones(self):
        return self.z_min.size

    @property
    def n_edges(self):
        return self.edge_a.size

    @property
    def shape(self):
        return self.labels.shape

    @property
    def plan_area(self):
        if self._areas is not None:
            return self._areas
        return self.n_cells * self.cellsize**2

    def zone_cells(self, k):
        return np.flatnonzero(self.labels.ravel() == k)

    @property
    def zones(self):
        flat = self.labels.ravel()
        order = np.argsort(flat, kind="stable")
        bounds = np.searchsorted(flat[order], np.arange(self.n_zones + 1))
        return [
            ImpactZone(k, order[bounds[k]:bounds[k + 1]], float(self.z_min[k]), float(self.spill[k]),
                       self.tables.table(k), float(self.plan_area[k]))
            for k in range(self.n_zones)
        ]

    @property
    def edges(self):
        return [
            ZoneEdge(int(a), int(b), float(c), float(l), float(d))
            for a, b, c, l, d in zip(self.edge_a, self.edge_b, self.crest, self.length, self.distance)
        ]

    def same_geometry(self, other):
        return (
            self.shape == other.shape
            and self.n_zones == other.n_zones
            and np.array_equal(self.labels, other.labels)
        )


# ---------------------------------------------------------------------------
# delineation
# ---------------------------------------------------------------------------

def _shifted(a, dr, dc, fill):
    """``out[r, c] = a[r + dr, c + dc]`` with ``fill`` outside the grid."""
    out = np.full_like(a, fill)
    nr, nc = a.shape
    out[max(0, -dr):nr - max(0, dr), max(0, -dc):nc - max(0, dc)] = \
        a[max(0, dr):nr - max(0, -dr), max(0, dc):nc - max(0, -dc)]
    return out


def _descent_labels(z, mask):
    """Label each valid cell with the flat index of its minimum's representative."""
    nr, nc = z.shape
    n = nr * nc
    zz = np.where(mask, np.inf, z)
    index = np.arange(n).reshape(nr, nc)
    receiver = index.copy()
    best = np.zeros((nr, nc))
    for dr, dc in _OFFSETS:
        nb = _shifted(zz, dr, dc, np.inf)
        dist = np.sqrt(2.0) if dr and dc else 1.0
        with np.errstate(invalid="ignore"):
            slope = (zz - nb) / dist
        better = (slope > best) & ~mask
        best = np.where(better, slope, best)
        receiver = np.where(better, index + dr * nc + dc, receiver)

    # flats: breadth-first from draining cells through equal-elevation neighbours
    pending = (receiver == index) & ~mask
    frontier = (receiver != index) & ~mask
    while pending.any() and frontier.any():
        reached = np.zeros_like(pending)
        for dr, dc in _OFFSETS:
            nb_front = _shifted(frontier, dr, dc, False)
            nb_z = _shifted(zz, dr, dc, np.inf)
            take = pending & ~reached & nb_front & (nb_z == zz)
            receiver = np.where(take, index + dr * nc + dc, receiver)
            reached |= take
        pending &= ~reached
        frontier = reached

    # remaining pending cells are minima; 8-connected groups share one zone
    comp, ncomp = ndimage.label(pending, structure=np.ones((3, 3), dtype=int))
    if ncomp:
        flat_comp = comp.ravel()
        cells = np.flatnonzero(flat_comp)
        # first cell (row-major) of each component is its representative
        first = np.full(ncomp + 1, n)
        np.minimum.at(first, flat_comp[cells], cells)
        rec = receiver.ravel().copy()
        rec[cells] = first[flat_comp[cells]]
    else:
        rec = receiver.ravel().copy()

    while True:
        nxt = rec[rec]
        if np.array_equal(nxt, rec):
            break
        rec = nxt
    return rec.reshape(nr, nc)


def _adjacent_pairs(labels, z, mask):
    """All 4-neighbour cell pairs lying in different zones: (a, b, crest)."""
    a_parts, b_parts, c_parts = [], [], []
    for (la, lb, za, zb, ma, mb) in (
        (labels[:, :-1], labels[:, 1:], z[:, :-1], z[:, 1:], mask[:, :-1], mask[:, 1:]),
        (labels[:-1, :], labels[1:, :], z[:-1, :], z[1:, :], mask[:-1, :], mask[1:, :]),
    ):
        sel = ~ma & ~mb & (la != lb)
        a_parts.append(la[sel])
        b_parts.append(lb[sel])
        c_parts.append(np.maximum(za[sel], zb[sel]))
    a = np.concatenate(a_parts)
    b = np.concatenate(b_parts)
    return np.minimum(a, b), np.maximum(a, b), np.concatenate(c_parts)


def _zone_edges(labels, z, mask, n_zones):
    lo, hi, crest = _adjacent_pairs(labels, z, mask)
    if lo.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0), np.zeros(0, dtype=np.int64)
    key = lo * n_zones + hi
    order = np.lexsort((crest, key))
    key_s = key[order]
    starts = np.flatnonzero(np.concatenate(([True], key_s[1:] != key_s[:-1])))
    counts = np.diff(np.append(starts, key_s.size))
    ukey = key_s[starts]
    return ukey // n_zones, ukey % n_zones, crest[order][starts], counts


def _spill(n_zones, ea, eb, crest, zmax):
    spill = np.full(n_zones, np.inf)
    np.minimum.at(spill, ea, crest)
    np.minimum.at(spill, eb, crest)
    return np.where(np.isinf(spill), zmax, spill)


def _merge_shallow(labels, z, mask, eps):
    """Merge zones shallower than ``eps`` into the neighbour across their spill."""
    flat = labels.ravel()
    valid = ~mask.ravel()
    zf = z.ravel()
    while True:
        n_zones = int(flat[valid].max()) + 1
        zmin = np.full(n_zones, np.inf)
        np.minimum.at(zmin, flat[valid], zf[valid])
        zmax = np.full(n_zones, -np.inf)
        np.maximum.at(zmax, flat[valid], zf[valid])
        ea, eb, crest, _ = _zone_edges(flat.reshape(labels.shape), z, mask, n_zones)
        if ea.size == 0:
            break
        # for each zone, the edge with the lowest crest (ties: lowest neighbour id)
        src = np.concatenate((ea, eb))
        dst = np.concatenate((eb, ea))
        cr = np.concatenate((crest, crest))
        order = np.lexsort((dst, cr, src))
        s_src = src[order]
        first = np.flatnonzero(np.concatenate(([True], s_src[1:] != s_src[:-1])))
        zone = s_src[first]
        target = dst[order][first]
        spill = cr[order][first]
        shallow = (spill - zmin[zone]) < eps
        if not shallow.any():
            break
        g = coo_matrix((np.ones(int(shallow.sum())), (zone[shallow], target[shallow])),
                       shape=(n_zones, n_zones))
        _, comp = connected_components(g, directed=False)
        flat = np.where(valid, comp[np.where(valid, flat, 0)], -1)
        flat = _renumber(flat, valid)
    return flat.reshape(labels.shape)


def _renumber(flat, valid):
    """Renumber labels 0..K-1 in order of first appearance (row-major)."""
    lab = flat[valid]
    _, first, inverse = np.unique(lab, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first))
    out = np.full(flat.shape, -1, dtype=np.int64)
    out[valid] = rank[inverse]
    return out


def delineate_zones(dtm, merge_eps=None, headroom=DEFAULT_HEADROOM):
    """Partition ``dtm`` into Impact Zones and build tables and edges.

    ``merge_eps`` (m) enables the merge pass for zones whose depression depth
    ``spill - z_min`` is below it. Tables extend to ``spill + headroom``.
    """
    if not isinstance(dtm, DtmRaster):
        raise TypeError("dtm must be a DtmRaster")
    mask = dtm.mask
    valid = ~mask.ravel()
    if not valid.any():
        raise ValueError("raster has no valid (non-nodata) cells")
    z = dtm.elevation

    rep = _descent_labels(z, mask).ravel()
    labels = _renumber(np.where(valid, rep, -1), valid)
    if merge_eps is not None and merge_eps > 0:
        labels = _merge_shallow(labels.reshape(z.shape), z, mask, merge_eps).ravel()

    n_zones = int(labels[valid].max()) + 1
    zf = z.ravel()
    lab = labels[valid]
    zv = zf[valid]
    n_cells = np.bincount(lab, minlength=n_zones)
    zmin = np.full(n_zones, np.inf)
    np.minimum.at(zmin, lab, zv)
    zmax = np.full(n_zones, -np.inf)
    np.maximum.at(zmax, lab, zv)

    ea, eb, crest, counts = _zone_edges(labels.reshape(z.shape), z, mask, n_zones)
    spill = _spill(n_zones, ea, eb, crest, zmax)

    # centroids -> flow distance
    xs, ys = dtm.cell_centers()
    cx = np.bincount(lab, weights=xs.ravel()[valid], minlength=n_zones) / n_cells
    cy = np.bincount(lab, weights=ys.ravel()[valid], minlength=n_zones) / n_cells
    distance = np.maximum(np.hypot(cx[ea] - cx[eb], cy[ea] - cy[eb]), dtm.cellsize)

    tables = _build_tables(lab, zv, n_zones, spill + headroom, dtm.cell_area)
    return ZoneMesh(labels.reshape(z.shape), dtm.cellsize, zmin, spill, n_cells, tables,
                    ea, eb, crest, counts * dtm.cellsize, distance, dtm.xll, dtm.yll)


def _build_tables(lab, zv, n_zones, top, area):
    order = np.lexsort((zv, lab))
    ls, zs = lab[order], zv[order]
    seg = np.searchsorted(ls, np.arange(n_zones + 1))
    csum = np.concatenate(([0.0], np.cumsum(zs)))
    rank = np.arange(zs.size) - seg[ls]
    before = csum[:-1] - csum[seg[ls]]
    topc = top[ls]
    first = (rank == 0) | np.concatenate(([True], zs[1:] != zs[:-1]))
    keep = first & (zs < topc)
    vol = area * (rank * zs - before)

    below = zs < topc
    nb = np.bincount(ls, weights=below, minlength=n_zones)
    sb = np.bincount(ls, weights=np.where(below, zs, 0.0), minlength=n_zones)
    vtop = area * (nb * top - sb)

    kept_per_zone = np.bincount(ls[keep], minlength=n_zones)
    sizes = kept_per_zone + 1
    offsets = np.concatenate(([0], np.cumsum(sizes)))
    levels = np.empty(offsets[-1])
    volumes = np.empty(offsets[-1])
    kept_idx = np.flatnonzero(keep)
    pos = offsets[ls[kept_idx]] + (np.arange(kept_idx.size) - np.searchsorted(ls[kept_idx], ls[kept_idx]))
    levels[pos] = zs[kept_idx]
    volumes[pos] = vol[kept_idx]
    levels[offsets[1:] - 1] = top
    volumes[offsets[1:] - 1] = vtop
    volumes[offsets[:-1]] = 0.0
    # drop zero-volume segments left by elevations closer than float resolution
    keep = np.ones(levels.size, dtype=bool)
    keep[1:] = np.diff(volumes) > 0
    keep[offsets[:-1]] = True
    if not keep.all():
        owner = np.repeat(np.arange(n_zones), sizes)
        offsets = np.concatenate(([0], np.cumsum(np.bincount(owner[keep], minlength=n_zones))))
        levels, volumes = levels[keep], volumes[keep]
    return TableSet(levels, volumes, offsets)


def prism_mesh(bottoms, area, edges=(), height=100.0):
    """Mesh of vertical-walled zones, one pseudo-cell each, in a single row.

    ``area`` is a plan area (m²) shared by all zones or one per zone;
    ``edges`` are ``(a, b, crest, length, distance)`` tuples. Useful for
    idealized reservoirs where the level-volume relation is ``area * depth``.
    """
    bottoms = np.asarray(bottoms, dtype=np.float64)
    n = bottoms.size
    areas = np.broadcast_to(np.asarray(area, dtype=np.float64), (n,)).copy()
    tops = bottoms + height
    levels = np.column_stack((bottoms, tops)).ravel()
    volumes = np.column_stack((np.zeros(n), areas * height)).ravel()
    tables = TableSet(levels, volumes, np.arange(0, 2 * n + 1, 2))
    e = np.array(edges, dtype=np.float64).reshape(-1, 5)
    return ZoneMesh(np.arange(n).reshape(1, n), np.sqrt(areas.mean()), bottoms, tops,
                    np.ones(n, dtype=np.int64), tables, e[:, 0].astype(np.int64), e[:, 1].astype(np.int64),
                    e[:, 2], e[:, 3], e[:, 4], areas=areas)


def waterfront_zones(mesh, dtm, include_grid_edge=False):
    """Zones touching nodata cells (the sea) and their boundary lengths (m).

    Returns ``(zone_ids, lengths)`` sorted by zone id.
    """
    lab = mesh.labels
    mask = dtm.mask
    counts = np.zeros(mesh.n_zones)
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nb_mask = _shifted(mask, dr, dc, include_grid_edge)
        sel = ~mask & nb_mask
        counts += np.bincount(lab[sel], minlength=mesh.n_zones)
    ids = np.flatnonzero(counts)
    return ids, counts[ids] * mesh.cellsize


def mesh_stats(mesh):
    """Zone/edge/cell counts and a cells-per-zone histogram (power-of-two bins)."""
    n = mesh.n_cells
    bins = 2 ** np.arange(0, int(np.ceil(np.log2(max(n.max(), 1)))) + 2)
    hist, _ = np.histogram(n, bins=bins)
    cells = int(n.sum())
    return {
        "zones": mesh.n_zones,
        "edges": mesh.n_edges,
        "cells": cells,
        "reduction": mesh.n_zones / cells,
        "cells_per_zone_histogram": {f"[{lo},{hi})": int(h) for lo, hi, h in zip(bins[:-1], bins[1:], hist) if h},
    }


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_mesh(mesh, path):
    """Write a mesh as JSON (schema documented in the README)."""
    t = mesh.tables
    doc = {
        "format": MESH_FORMAT,
        "version": MESH_VERSION,
        "grid": {"nrows": mesh.shape[0], "ncols": mesh.shape[1], "cellsize": mesh.cellsize,
                 "xll": mesh.xll, "yll": mesh.yll},
        "labels": mesh.labels.ravel().tolist(),
        "zones": [
            {
                "id": k,
                "z_min": float(mesh.z_min[k]),
                "spill_elevation": float(mesh.spill[k]),
                "n_cells": int(mesh.n_cells[k]),
                "levels": t.levels[t.offsets[k]:t.offsets[k + 1]].tolist(),
                "volumes": t.volumes[t.offsets[k]:t.offsets[k + 1]].tolist(),
            }
            for k in range(mesh.n_zones)
        ],
        "edges": [
            {"a": int(a), "b": int(b), "crest": float(c), "length": float(l), "distance": float(d)}
            for a, b, c, l, d in zip(mesh.edge_a, mesh.edge_b, mesh.crest, mesh.length, mesh.distance)
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_mesh(path):
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != MESH_FORMAT or doc.get("version") != MESH_VERSION:
        raise ValueError(f"{path}: not an {MESH_FORMAT} v{MESH_VERSION} file")
    g = doc["grid"]
    zones = doc["zones"]
    sizes = [len(zn["levels"]) for zn in zones]
    offsets = np.concatenate(([0], np.cumsum(sizes)))
    tables = TableSet(
        np.concatenate([zn["levels"] for zn in zones]),
        np.concatenate([zn["volumes"] for zn in zones]),
        offsets,
    )
    edges = doc["edges"]
    return ZoneMesh(
        np.array(doc["labels"]).reshape(g["nrows"], g["ncols"]), g["cellsize"],
        [zn["z_min"] for zn in zones], [zn["spill_elevation"] for zn in zones],
        [zn["n_cells"] for zn in zones], tables,
        [e["a"] for e in edges], [e["b"] for e in edges], [e["crest"] for e in edges],
        [e["length"] for e in edges], [e["distance"] for e in edges], g["xll"], g["yll"],
    )
