"""Quadrature rules shared across modules.

Gauss-Legendre for smooth integrands and a tanh-sinh (double exponential)
rule for integrands with integrable endpoint singularities such as
``x log x`` or ``log x``.
"""
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=32)
def gauss_legendre01(n):
    """Nodes and weights of the n-point Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=8)
def tanh_sinh01(level=6, t_max=3.2):
    """Tanh-sinh rule on [0, 1].

    Returns ``(x, one_minus_x, w)``; the complement is computed directly so
    integrands singular at either endpoint can be evaluated without
    cancellation.
    """
    step = 2.0 ** -level
    t = np.arange(-t_max, t_max + 0.5 * step, step)
    s = 0.5 * np.pi * np.sinh(t)
    # x = (1 + tanh s)/2, 1 - x = (1 - tanh s)/2, both via exp to avoid loss
    e = np.exp(-2.0 * np.abs(s))
    small = e / (1.0 + e)
    big = 1.0 / (1.0 + e)
    x = np.where(s >= 0, big, small)
    xc = np.where(s >= 0, small, big)
    w = step * 0.5 * np.pi * np.cosh(t) / np.cosh(s) ** 2 * 0.5
    keep = (x > 0) & (x < 1) & (w > 0)
    return x[keep], xc[keep], w[keep]


def triangle_rule_singular(a, b, c, level=6):
    """Points, weights and barycentric coordinates on triangle (a, b, c).

    Uses the collapsed map x = a + s((1-t) b + t c - a) with tanh-sinh in both
    s and t, so log singularities along the edge bc and at b, c are
    integrated to near machine precision. Affine functions should be
    evaluated through the returned barycentric coordinates ``(n, 3)``; the
    Cartesian points lose the distance to bc in round-off.
    """
    s, sc, ws = tanh_sinh01(level)
    t, tc, wt = tanh_sinh01(level)
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    c = np.asarray(c, float)
    jac = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    S, T = np.meshgrid(s, t, indexing="ij")
    Sc, Tc = np.meshgrid(sc, tc, indexing="ij")
    bary = np.stack([Sc, S * Tc, S * T], axis=-1).reshape(-1, 3)
    pts = bary @ np.stack([a, b, c])
    wts = jac * (ws * s)[:, None] * wt[None, :]
    return pts, wts.reshape(-1), bary
