"""Impact-zone flood spreading coupled to subsurface Darcy flow."""

__version__ = "0.1.0"

from .izmesh import LevelOverflowError, ZoneMesh, delineate_zones, load_mesh, save_mesh
from .surface import Hydrograph, SurfaceConfig, SurfaceModel
from .subsurface import PorousParams, SubsurfaceGrid, SubsurfaceModel, build_grid
from .terrain import DtmRaster, read_ascii_grid, save_ascii_grid, synth_terrain

__all__ = [
    "DtmRaster", "Hydrograph", "LevelOverflowError", "PorousParams", "SubsurfaceGrid",
    "SubsurfaceModel", "SurfaceConfig", "SurfaceModel", "ZoneMesh", "__version__", "build_grid",
    "delineate_zones", "load_mesh", "read_ascii_grid", "save_ascii_grid", "save_mesh", "synth_terrain",
]
