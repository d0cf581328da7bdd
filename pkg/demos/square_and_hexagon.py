"""Solve the constant scalar curvature problem on two polygons.

The square [-1, 1]^2 has the product solution, so the solver should come
back to it from a perturbed start. The Delzant hexagon has no closed form;
refining the grid shows the discrete minimum settling down.
"""
import numpy as np

from abreukit.geometry import build_polytope
from abreukit.potential import Grid
from abreukit.solver import SolverConfig, affine_normalize, minimize_M, residual_report

square = build_polytope([(-1, -1), (1, -1), (1, 1), (-1, 1)], [1, 1, 1, 1])
grid = Grid(square, 64)
x = grid.unk_points
f0 = 0.05 * np.cos(np.pi * x[:, 0] / 2) ** 2 * np.cos(np.pi * x[:, 1] / 2) ** 2
res = minimize_M(square, SolverConfig(N=64), f0=f0, grid=grid)
rep = residual_report(res)
print(f"square: A = {square.A}, {res.status} after {res.iterations} Newton steps")
print(f"  M = {rep.M:.12f} (exact 8 log 2 - 8 = {8 * np.log(2) - 8:.12f})")
print(f"  max residual {rep.max_residual:.2e}, L(u) = {rep.L_of_u:.10f} (2 Area = 8)")

hexagon = build_polytope([(1, 0), (1, 1), (0, 1), (-1, 0), (-1, -1), (0, -1)], [1] * 6)
print("hexagon:")
for N in (16, 32, 64):
    r = minimize_M(hexagon, SolverConfig(N=N))
    # normalising at the centre removes the affine gauge
    u = affine_normalize(r.potential, [0.0, 0.0])
    print(f"  N={N:3d}  M = {r.M_history[-1]:.6f}  u(0.6, 0.2) = {float(u.value(np.array([0.6, 0.2]))):.6f}"
          f"  max residual {r.max_residual:.2e}  ({r.elapsed:.1f} s)")
