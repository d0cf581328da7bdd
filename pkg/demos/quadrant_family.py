"""The zero scalar curvature potentials on the quadrant.

Each member is given implicitly through y = y(x); the script checks the
inverse map, the scalar curvature by finite differences and, for equal
parameters, the Ricci-flat relation between the Legendre coordinates.
"""
import numpy as np

from abreukit.analytic import (JoyceField, JoyceParams, joyce_inverse, joyce_inverse_closed,
                               joyce_map, taub_nut_identity)
from abreukit.potential import abreu_at

t = np.linspace(0.5, 5.0, 50)
X = np.stack(np.meshgrid(t, t, indexing="ij"), -1).reshape(-1, 2)
for a1, a2 in ((1, 1), (1, 2), (3, 0.5)):
    p = JoyceParams(a1, a2)
    y = np.column_stack(joyce_inverse(p, X[:, 0], X[:, 1]))
    back = np.column_stack(joyce_map(p, y[:, 0], y[:, 1]))
    closed = np.column_stack(joyce_inverse_closed(p, X[:, 0], X[:, 1]))
    print(f"a=({a1}, {a2}): round trip {np.abs(back - X).max():.1e}, "
          f"closed form vs Newton {np.abs(closed - y).max():.1e}")
    for order in (2, 4):
        r = abreu_at(JoyceField(p), X, 1e-3, order=order)
        print(f"    scalar curvature, order-{order} differences: max {np.abs(r).max():.1e}")
    if a1 == a2:
        print(f"    xi1 + xi2 - 2 log(r/2) - 2: max {np.abs(taub_nut_identity(p, X)).max():.1e}")
