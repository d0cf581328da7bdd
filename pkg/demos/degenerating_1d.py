"""A one-dimensional family whose solutions degenerate as eps -> 0.

U normalised at x = -1/2 and at x = +1/2 differ by an affine function with
slope n_eps; the slope blows up like pi / eps.
"""
import numpy as np

from abreukit.analytic import one_d_family

print(" eps      n_eps        closed form   eps * n_eps")
for eps in (0.1, 0.03, 0.01, 0.003, 0.001):
    fam, n = one_d_family(eps, "at_minus_half")
    print(f"{eps:<7} {n:12.6f} {fam.n_eps_closed_form():13.6f} {eps * n:10.6f}")
print(f"pi = {np.pi:.6f}")
