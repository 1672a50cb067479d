"""Depth frames rendered as binary PPM images over a hillshade.

Palette (fixed, so images can be compared byte for byte):

* hillshade: gray level ``round(255 * shade)`` with sun azimuth 315 deg and
  altitude 45 deg, ``shade`` clipped to [0, 1];
* wet pixels (depth > ``WET_DEPTH``) are painted opaque with a linear ramp from
  ``SHALLOW_RGB`` at 0 m to ``DEEP_RGB`` at ``RAMP_MAX`` m and beyond;
* nodata pixels are ``NODATA_RGB``.
"""
from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
from scipy import ndimage

from .terrain import read_ascii_grid

WET_DEPTH = 1e-6
RAMP_MAX = 2.0
SHALLOW_RGB = (198, 219, 239)
DEEP_RGB = (8, 48, 107)
NODATA_RGB = (32, 32, 48)
AZIMUTH = 315.0
ALTITUDE = 45.0

_FRAME = re.compile(r"^(depth|htotal)_(\d{8})\.asc$")


class RenderError(RuntimeError):
    pass


def hillshade(dtm, azimuth=AZIMUTH, altitude=ALTITUDE):
    """Lambertian shading in [0, 1]; nodata cells take the mean valid elevation."""
    z = np.where(dtm.mask, dtm.elevation[dtm.valid].mean() if dtm.valid.any() else 0.0, dtm.elevation)
    dzdy, dzdx = np.gradient(z, dtm.cellsize)
    # row index grows southwards, so flip the y gradient to get a north-up slope
    dzdy = -dzdy
    slope = np.arctan(np.hypot(dzdx, dzdy))
    aspect = np.arctan2(-dzdx, -dzdy)  # direction the slope faces, clockwise from north
    az, alt = np.radians(azimuth), np.radians(altitude)
    shade = np.sin(alt) * np.cos(slope) + np.cos(alt) * np.sin(slope) * np.cos(az - aspect)
    return np.clip(shade, 0.0, 1.0)


def depth_color(depth):
    """Palette RGB (uint8) for an array of depths, assumed wet."""
    f = np.clip(np.asarray(depth, dtype=np.float64) / RAMP_MAX, 0.0, 1.0)[..., None]
    lo, hi = np.array(SHALLOW_RGB, float), np.array(DEEP_RGB, float)
    return np.rint(lo + f * (hi - lo)).astype(np.uint8)


def compose(dtm, depth, shade=None):
    """RGB image ``(nrows, ncols, 3)`` for one depth array on ``dtm``'s grid."""
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != dtm.shape:
        raise RenderError(f"frame shape {depth.shape} does not match DTM {dtm.shape}")
    shade = hillshade(dtm) if shade is None else shade
    gray = np.rint(255.0 * shade).astype(np.uint8)
    img = np.repeat(gray[..., None], 3, axis=2)
    wet = (depth > WET_DEPTH) & ~dtm.mask
    img[wet] = depth_color(depth[wet])
    img[dtm.mask] = NODATA_RGB
    return img


def write_ppm(path, img):
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w, _ = img.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_ppm(path):
    data = Path(path).read_bytes()
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+255\s", data)
    if m is None:
        raise RenderError(f"{path}: not an 8-bit binary PPM")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=m.end()).reshape(h, w, 3)


def list_frames(run_dir):
    """Sorted ``(time, path)`` pairs, preferring h_total frames over depth frames."""
    frames = Path(run_dir) / "frames"
    if not frames.is_dir():
        raise RenderError(f"no frames directory in {run_dir}")
    found = {"depth": {}, "htotal": {}}
    for p in frames.iterdir():
        m = _FRAME.match(p.name)
        if m:
            found[m.group(1)][int(m.group(2))] = p
    chosen = found["htotal"] or found["depth"]
    if not chosen:
        raise RenderError(f"no depth frames in {frames}")
    return sorted(chosen.items())


def render_run(run_dir, out_dir=None, dtm=None):
    """Render every frame of a run directory; returns the image paths."""
    run_dir = Path(run_dir)
    frames = list_frames(run_dir)
    if dtm is None:
        manifest = run_dir / "manifest.json"
        if not manifest.is_file():
            raise RenderError(f"no manifest.json in {run_dir}")
        dtm = read_ascii_grid(json.loads(manifest.read_text())["dtm"])
    out = Path(out_dir) if out_dir is not None else run_dir / "images"
    out.mkdir(parents=True, exist_ok=True)
    shade = hillshade(dtm)
    paths = []
    for t, p in frames:
        frame = read_ascii_grid(p)
        path = out / f"frame_{t:08d}.ppm"
        write_ppm(path, compose(dtm, np.where(frame.mask, 0.0, frame.elevation), shade))
        paths.append(path)
    return paths


# -- frame analysis -------------------------------------------------------------

def perimeter_mask(valid, width):
    """Valid cells within ``width`` cells of nodata or the grid edge."""
    padded = np.pad(valid, 1, constant_values=False)
    dist = ndimage.distance_transform_edt(padded)[1:-1, 1:-1]
    return valid & (dist <= width)


def wet_fraction(depth, region):
    """Fraction of ``region`` cells wetter than ``WET_DEPTH``."""
    n = int(region.sum())
    return float(((np.asarray(depth) > WET_DEPTH) & region).sum()) / n if n else 0.0


def first_wet_index(frames, region):
    """Index of the first frame with any wet cell in ``region``, or ``None``."""
    for i, d in enumerate(frames):
        if wet_fraction(d, region) > 0:
            return i
    return None
