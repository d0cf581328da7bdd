"""Hinge positivity scan: a stable square and a destabilized hexagon.

Lightening four edges of the hexagon keeps the moment conditions (by
central symmetry) but makes L negative on a crease.
"""
from abreukit.geometry import AffineFunction, build_polytope
from abreukit.stability import evaluate_L_hinge, scan_positivity

square = build_polytope([(-1, -1), (1, -1), (1, 1), (-1, 1)], [1, 1, 1, 1])
print(f"L(x1+) on the square: {evaluate_L_hinge(square, AffineFunction(1, 0, 0))}")
rep = scan_positivity(square)
print(f"square: {rep.status}, min normalised L = {rep.min_L:.6f}, C >= {rep.C_estimate:.3f}")

hexagon = [(1, 0), (1, 1), (0, 1), (-1, 0), (-1, -1), (0, -1)]
for w in (1.0, 0.5, 0.15, 0.1):
    P = build_polytope(hexagon, [1, w, w, 1, w, w])
    r = scan_positivity(P)
    lam = r.argmin_lambda.lam
    print(f"hexagon w={w:<4}: {r.status:12s} min L = {r.min_L:+.5f}  "
          f"crease {lam.a1:+.3f} x1 {lam.a2:+.3f} x2 {lam.b:+.3f} = 0")
