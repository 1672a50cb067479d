"""Digital terrain models: ESRI ASCII grid I/O and synthetic test terrains.

Rasters are stored row-major, north-up: row 0 is the northern-most row
(largest y), matching the ASCII grid convention.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")
DEFAULT_NODATA = -9999.0


class GridFormatError(ValueError):
    """Malformed ASCII grid text; carries the 1-based line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class DtmRaster:
    """Regular elevation grid with a nodata mask.

    ``elevation`` is a ``(nrows, ncols)`` float64 array; nodata cells hold
    the sentinel value and are flagged in ``mask`` (True = nodata).
    """

    elevation: np.ndarray
    cellsize: float
    xll: float = 0.0
    yll: float = 0.0
    nodata: float = DEFAULT_NODATA
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        z = np.array(self.elevation, dtype=np.float64)
        if z.ndim != 2 or z.size == 0:
            raise ValueError("elevation must be a non-empty 2-D array")
        if not self.cellsize > 0:
            raise ValueError(f"cellsize must be positive, got {self.cellsize}")
        mask = z == self.nodata if self.mask is None else np.array(self.mask, dtype=bool)
        if mask.shape != z.shape:
            raise ValueError("mask shape does not match elevation")
        z[mask] = self.nodata
        if not np.all(np.isfinite(z[~mask])):
            raise ValueError("non-nodata elevations must be finite")
        z.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "elevation", z)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "cellsize", float(self.cellsize))

    @property
    def nrows(self):
        return self.elevation.shape[0]

    @property
    def ncols(self):
        return self.elevation.shape[1]

    @property
    def shape(self):
        return self.elevation.shape

    @property
    def cell_area(self):
        return self.cellsize * self.cellsize

    @property
    def valid(self):
        return ~self.mask

    def cell_centers(self):
        """Return (x, y) arrays of cell-center coordinates."""
        cols = np.arange(self.ncols)
        rows = np.arange(self.nrows)
        x = self.xll + (cols + 0.5) * self.cellsize
        y = self.yll + (self.nrows - rows - 0.5) * self.cellsize
        return np.meshgrid(x, y)

    def with_values(self, values, nodata=None):
        """A raster on the same grid carrying ``values``; masked cells stay nodata."""
        return DtmRaster(
            np.where(self.mask, self.nodata if nodata is None else nodata, values),
            self.cellsize, self.xll, self.yll,
            self.nodata if nodata is None else nodata, self.mask,
        )

    def __eq__(self, other):
        if not isinstance(other, DtmRaster):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.cellsize == other.cellsize
            and self.xll == other.xll
            and self.yll == other.yll
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.elevation[~self.mask], other.elevation[~other.mask])
        )


def parse_ascii_grid(text):
    """Parse ESRI ASCII grid text into a :class:`DtmRaster`.

    Header keys are matched case-insensitively; ``xllcenter``/``yllcenter``
    are converted to corner registration. ``NODATA_value`` is optional
    (defaults to -9999). Errors are reported with the offending line number.
    """
    lines = text.splitlines()
    header = {}
    lineno = 0
    while lineno < len(lines) and len(header) < len(HEADER_KEYS):
        raw = lines[lineno]
        parts = raw.split()
        if not parts:
            lineno += 1
            continue
        key = parts[0].lower()
        if key in ("xllcenter", "yllcenter"):
            key = key[:3] + "center"
        elif key not in HEADER_KEYS:
            break
        if len(parts) != 2:
            raise GridFormatError(f"header line must be 'key value', got {raw!r}", lineno + 1)
        if key in header:
            raise GridFormatError(f"duplicate header key {parts[0]!r}", lineno + 1)
        try:
            header[key] = float(parts[1])
        except ValueError:
            raise GridFormatError(f"non-numeric header value {parts[1]!r}", lineno + 1) from None
        lineno += 1

    for axis in ("xll", "yll"):
        # cell-centre registration: shift to the lower-left corner
        if axis + "center" in header and "cellsize" in header:
            if axis + "corner" in header:
                raise GridFormatError(f"both {axis}corner and {axis}center given", lineno + 1)
            header[axis + "corner"] = header.pop(axis + "center") - 0.5 * header["cellsize"]
    missing = [k for k in HEADER_KEYS[:5] if k not in header]
    if missing:
        raise GridFormatError(f"missing header keys {missing}", lineno + 1)
    ncols, nrows = header["ncols"], header["nrows"]
    if ncols != int(ncols) or nrows != int(nrows) or ncols < 1 or nrows < 1:
        raise GridFormatError("ncols/nrows must be positive integers")
    ncols, nrows = int(ncols), int(nrows)
    if header["cellsize"] <= 0:
        raise GridFormatError("cellsize must be positive")
    nodata = header.get("nodata_value", DEFAULT_NODATA)

    values = []
    for offset, raw in enumerate(lines[lineno:]):
        for pos, token in enumerate(raw.split()):
            try:
                values.append(float(token))
            except ValueError:
                raise GridFormatError(
                    f"non-numeric token {token!r} at position {pos + 1}", lineno + offset + 1
                ) from None
    if len(values) != nrows * ncols:
        raise GridFormatError(f"expected {nrows * ncols} values, found {len(values)}")

    z = np.array(values, dtype=np.float64).reshape(nrows, ncols)
    bad = ~np.isfinite(z) & (z != nodata)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise GridFormatError(f"non-finite value at row {r}, col {c}")
    return DtmRaster(z, header["cellsize"], header["xllcorner"], header["yllcorner"], nodata)


def _fmt(v):
    # repr is the shortest string that round-trips a float64 exactly
    return repr(float(v))


def write_ascii_grid(raster):
    """Serialize a raster to ESRI ASCII grid text (exact float round-trip)."""
    out = [
        f"ncols {raster.ncols}",
        f"nrows {raster.nrows}",
        f"xllcorner {_fmt(raster.xll)}",
        f"yllcorner {_fmt(raster.yll)}",
        f"cellsize {_fmt(raster.cellsize)}",
        f"NODATA_value {_fmt(raster.nodata)}",
    ]
    z = np.where(raster.mask, raster.nodata, raster.elevation)
    for row in z:
        out.append(" ".join(_fmt(v) for v in row))
    return "\n".join(out) + "\n"


def read_ascii_grid(path):
    return parse_ascii_grid(Path(path).read_text())


def save_ascii_grid(raster, path):
    Path(path).write_text(write_ascii_grid(raster))


# ---------------------------------------------------------------------------
# synthetic terrains
# ---------------------------------------------------------------------------

def _index_grid(nrows, ncols):
    return np.meshgrid(np.arange(nrows, dtype=float), np.arange(ncols, dtype=float), indexing="ij")


def synth_terrain(shape, nrows, ncols, cellsize=1.0, **params):
    """Build a deterministic synthetic terrain.

    Shapes and their parameters (distances in cells, elevations in meters):

    ``flat``
        ``z0``
    ``single_basin``
        paraboloid bowl: ``center=(row, col)``, ``radius``, ``depth``, ``rim=0``
    ``two_basin``
        two paraboloid bowls whose ridge saddle sits at ``saddle`` (default 5)
        above ``floor`` (default 0)
    ``coastal_slope``
        plane rising northwards from ``z0`` at ``gradient`` m/m
    ``island_with_lowered_center``
        circular island in a nodata sea: flat shore band at ``shore``, apron
        rising to a ring crest at ``rim``, and an interior bowl lowered by
        ``depth`` below the rim. ``island_radius``, ``rim_radius``,
        ``basin_radius`` control the rings.
    ``rough``
        smooth hills plus white noise: ``relief``, ``noise``, ``seed``
    """
    if nrows < 1 or ncols < 1:
        raise ValueError(f"nonpositive dimensions {nrows}x{ncols}")
    builder = _SHAPES.get(shape)
    if builder is None:
        raise ValueError(f"unknown terrain shape {shape!r}; choose from {sorted(_SHAPES)}")
    z, mask = builder(nrows, ncols, cellsize, **params)
    return DtmRaster(z, cellsize, 0.0, 0.0, DEFAULT_NODATA, mask)


def _flat(nrows, ncols, cellsize, z0=0.0):
    return np.full((nrows, ncols), float(z0)), None


def _single_basin(nrows, ncols, cellsize, center=None, radius=None, depth=1.0, rim=0.0):
    if center is None:
        center = ((nrows - 1) / 2, (ncols - 1) / 2)
    if radius is None:
        radius = min(nrows, ncols) / 2
    r, c = _index_grid(nrows, ncols)
    rho2 = ((r - center[0]) ** 2 + (c - center[1]) ** 2) / radius**2
    z = np.where(rho2 < 1.0, rim - depth * (1.0 - rho2), rim)
    return z, None


def _two_basin(nrows, ncols, cellsize, saddle=5.0, floor=0.0):
    # bowls centered on the middle row at ncols/4 and 3*ncols/4; the ridge
    # cell halfway between them sits exactly at the saddle height
    c1 = (ncols - 1) // 4
    c2 = c1 + 2 * ((ncols - 1 - 2 * c1) // 2)
    half = (c2 - c1) / 2
    if half < 1:
        raise ValueError("two_basin needs at least 5 columns")
    r, c = _index_grid(nrows, ncols)
    rc = (nrows - 1) // 2
    k = (saddle - floor) / half**2
    p1 = floor + k * ((r - rc) ** 2 + (c - c1) ** 2)
    p2 = floor + k * ((r - rc) ** 2 + (c - c2) ** 2)
    return np.minimum(p1, p2), None


def _coastal_slope(nrows, ncols, cellsize, gradient=0.01, z0=0.0):
    r, _ = _index_grid(nrows, ncols)
    return z0 + gradient * (nrows - 1 - r) * cellsize, None


def _island(nrows, ncols, cellsize, shore=0.5, rim=2.5, depth=2.3,
            island_radius=None, rim_radius=None, basin_radius=None, shore_width=1.5):
    half = (min(nrows, ncols) - 1) / 2
    island_radius = 0.9 * half if island_radius is None else island_radius
    rim_radius = 0.55 * island_radius if rim_radius is None else rim_radius
    basin_radius = 0.8 * rim_radius if basin_radius is None else basin_radius
    if not (basin_radius < rim_radius < island_radius - shore_width):
        raise ValueError("need basin_radius < rim_radius < island_radius - shore_width")
    r, c = _index_grid(nrows, ncols)
    dist = np.hypot(r - (nrows - 1) / 2, c - (ncols - 1) / 2)
    sea = dist > island_radius
    apron_top = island_radius - shore_width
    # apron: linear from the flat shore band up to the ring crest
    frac = np.clip((apron_top - dist) / (apron_top - rim_radius), 0.0, 1.0)
    z = shore + (rim - shore) * frac
    # interior bowl, lowered below the rim
    inner = dist < basin_radius
    rho2 = (dist / basin_radius) ** 2
    z = np.where(inner, rim - depth * (1.0 - rho2), np.where(dist <= rim_radius, rim, z))
    z = np.where(sea, DEFAULT_NODATA, z)
    return z, sea


def _rough(nrows, ncols, cellsize, relief=5.0, noise=0.2, seed=0, wavelength=40.0):
    rng = np.random.default_rng(seed)
    r, c = _index_grid(nrows, ncols)
    z = relief * (np.sin(2 * math.pi * r / wavelength) * np.cos(2 * math.pi * c / (1.3 * wavelength)))
    z += noise * rng.standard_normal((nrows, ncols))
    return z, None


_SHAPES = {
    "flat": _flat,
    "single_basin": _single_basin,
    "two_basin": _two_basin,
    "coastal_slope": _coastal_slope,
    "island_with_lowered_center": _island,
    "rough": _rough,
}
