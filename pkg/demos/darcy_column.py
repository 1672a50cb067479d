"""Ponded water infiltrating a single soil column.

A 10 m column with unit diffusivity starts hydrostatic; 1 m of water is held
on top. The head front spreads as erfc(z / (2 sqrt(D t))) in the upper part
of the column before the bottom is felt.
"""
import numpy as np
from scipy.special import erfc

from izflood import PorousParams, SubsurfaceGrid
from izflood.subsurface import SurfaceBC, darcy_velocity

RHO_G = 1000.0 * 9.81
params = PorousParams(storage=1e-6, permeability=1e-9)  # D = 1 m2/s
grid = SubsurfaceGrid(np.array([[0.0]]), 1.0, 10.0, 100, params)
bc = SurfaceBC(np.array([1.0]))

t, dt = 0.0, 0.05
for target in (0.5, 1.0, 2.0):
    while t < target - 1e-12:
        grid.step(bc, dt)
        t += dt
    z = grid.z_center[0]
    excess = grid.phi / RHO_G  # head above the initial hydrostatic state
    exact = erfc(np.abs(z) / (2 * np.sqrt(params.diffusivity() * t)))
    top = np.abs(z) < 3.0
    print(f"t={t:.1f} s  max |numeric - erfc| over top 3 m: {np.max(np.abs(excess - exact)[top]):.3f} m, "
          f"surface velocity {darcy_velocity(grid).vertical[0][0]:.2e} m/s")
