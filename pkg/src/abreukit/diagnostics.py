"""Numerical probes of a potential: edge and vertex quantities, sublevel
slices, the convex-envelope inequality and Riemannian lengths.

Every probe accepts a field-like object with ``value``, ``gradient``,
``hessian`` and ``domain_margin`` (a :class:`~abreukit.potential.PotentialField`
or one of the closed-form fields in :mod:`abreukit.analytic`).
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from ._quadrature import gauss_legendre01
from .errors import EmptyX, PathOutside, ProbeOutside
from .geometry import AffineFunction, Polygon, clip_polygon

PROBE_TOL = 1e-12


def _margin(field, x):
    return np.asarray(field.domain_margin(np.asarray(x, float)), float)


# --------------------------------------------------------------------------
# edge probes


@dataclass(frozen=True)
class EdgeProbe:
    """Point ``p``, unit direction ``nu`` and distance ``s`` to the edge point."""

    p: np.ndarray
    nu: np.ndarray
    s: float
    edge: Optional[int] = None

    @property
    def q(self):
        return self.p + self.s * self.nu


def edge_probe(polytope, p, edge):
    """Probe from ``p`` along the outward Euclidean normal of ``edge``."""
    p = np.asarray(p, float)
    n = polytope.normals[edge]
    nu = -n / np.linalg.norm(n)  # normals point inward
    s = float(polytope.ell(p)[edge] / np.linalg.norm(n))
    probe = EdgeProbe(p, nu, s, edge)
    a, b = polytope.polygon.edges[edge]
    t = (probe.q - a) @ (b - a) / ((b - a) @ (b - a))
    if not (s > 0 and PROBE_TOL < t < 1 - PROBE_TOL):
        raise ProbeOutside("the normal ray from p does not meet the open edge")
    return probe


def D_of_p(field, probe):
    """``(u(q) - u(p) - grad u(p).(q - p)) / s`` for the edge point ``q``."""
    p, q = np.asarray(probe.p, float), probe.q
    if not _margin(field, p) > 0 or _margin(field, q) < -PROBE_TOL:
        raise ProbeOutside("probe point or its edge point lies outside the domain")
    up = float(field.value(p))
    gp = np.asarray(field.gradient(p), float)
    return (float(field.value(q)) - up - gp @ (q - p)) / probe.s


# --------------------------------------------------------------------------
# M condition


def m_condition_scan(field, points=None, d_factor=1.0, chunk=2048):
    """Largest ``V(p, q) = (grad u(q) - grad u(p)).nu`` over admissible pairs.

    ``nu = (q - p) / |q - p|``; a pair is admissible when ``p - d nu`` and
    ``q + d nu`` lie in the domain, ``d = d_factor |q - p|``. Without
    ``points`` a grid field uses its stencil nodes with stride 2.
    Returns ``(V_max, p, q)``.
    """
    if points is None:
        g = field.grid
        ij = np.argwhere(g.stencil)
        keep = (ij[:, 0] % 2 == 0) & (ij[:, 1] % 2 == 0)
        points = g.points[ij[keep, 0], ij[keep, 1]]
    pts = np.asarray(points, float)
    grads = np.asarray(field.gradient(pts), float)
    best = (-np.inf, None, None)
    n = len(pts)
    for s in range(0, n, chunk):
        P, GP = pts[s:s + chunk], grads[s:s + chunk]
        diff = pts[None] - P[:, None]
        dist = np.linalg.norm(diff, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            nu = diff / dist[..., None]
        V = np.einsum("abk,abk->ab", grads[None] - GP[:, None], nu)
        d = d_factor * dist
        ok = (dist > 0) & (_margin(field, P[:, None] - d[..., None] * nu) >= 0)
        ok &= _margin(field, pts[None] + d[..., None] * nu) >= 0
        V = np.where(ok, V, -np.inf)
        k = np.unravel_index(np.argmax(V), V.shape)
        if V[k] > best[0]:
            best = (float(V[k]), P[k[0]].copy(), pts[k[1]].copy())
    return best


# --------------------------------------------------------------------------
# vertex probes


@dataclass(frozen=True)
class VertexProbe:
    """Chart ``x -> origin + x1 e1 + x2 e2`` and the sample values of t."""

    origin: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    ts: np.ndarray

    @property
    def matrix(self):
        return np.column_stack([self.e1, self.e2])

    def to_world(self, x):
        return self.origin + np.asarray(x, float) @ self.matrix.T


def vertex_probe(polytope, vertex, ts):
    """Delzant chart at a vertex: its edges become the positive axes.

    The chart columns are the primitive edge vectors leaving the vertex,
    so the incident edge functions become the coordinates.
    """
    V = polytope.polygon.vertices
    K = len(V)
    # y1 = l of the incoming edge, y2 = l of the outgoing edge, so the
    # outgoing edge is the y1-axis and the incoming edge the y2-axis
    M = np.linalg.inv(np.array([polytope.normals[(vertex - 1) % K], polytope.normals[vertex]],
                               float))
    e1, e2 = M[:, 0], M[:, 1]
    return VertexProbe(V[vertex].astype(float), e1, e2, np.asarray(ts, float))


class ChartField:
    """A field pulled back through a vertex chart."""

    def __init__(self, field, probe):
        self.base, self.probe = field, probe
        self.C = probe.matrix
        self.detC = abs(np.linalg.det(self.C))

    def value(self, x):
        return self.base.value(self.probe.to_world(x))

    def gradient(self, x):
        return self.base.gradient(self.probe.to_world(x)) @ self.C

    def hessian(self, x):
        return self.C.T @ self.base.hessian(self.probe.to_world(x)) @ self.C

    def domain_margin(self, x):
        return self.base.domain_margin(self.probe.to_world(x))


def _check_chart(chart, pts):
    if np.any(_margin(chart, pts) < -PROBE_TOL):
        raise ProbeOutside("vertex samples leave the domain")


@dataclass
class VertexProfile:
    ts: np.ndarray
    E: np.ndarray
    Delta: np.ndarray
    F: dict
    delta_n: np.ndarray
    E_max: float


def _diag_slope(chart, t):
    return chart.gradient(np.array([t, t])) @ np.ones(2)


def vertex_profile(field, probe, eps=(0.1,), n_max=None):
    """``E(t)``, ``Delta(t)``, ``F_eps(t) = E + eps Delta`` and ``delta_n``.

    ``E(t) = (u(2t, 0) + u(0, 2t) - 2 u(t, t)) / t``;
    ``Delta(t) = t^2 max J`` over 41 points of the chord ``x1 + x2 = 2t``,
    ``|x1 - x2| <= t/10``; ``delta_n = u'(2^{1-n}) - u'(2^{-n})`` for the
    diagonal restriction ``u(t) = u(t, t)``, ``n = 1..n_max``.
    """
    chart = ChartField(field, probe)
    ts = probe.ts
    E, Dl = [], []
    for t in ts:
        pts = np.array([[2 * t, 0], [0, 2 * t], [t, t]])
        _check_chart(chart, pts)
        v = chart.value(pts)
        E.append((v[0] + v[1] - 2 * v[2]) / t)
        s = np.linspace(-t / 20, t / 20, 41)
        chord = np.column_stack([t + s, t - s])
        _check_chart(chart, chord)
        J = np.linalg.det(chart.hessian(chord))
        Dl.append(t * t * J.max())
    E, Dl = np.array(E), np.array(Dl)
    F = {float(e): E + e * Dl for e in eps}
    if n_max is None:
        n_max = int(np.floor(-np.log2(ts.min()))) if ts.min() < 1 else 0
    dn = np.array([_diag_slope(chart, 2.0 ** (1 - n)) - _diag_slope(chart, 2.0 ** (-n))
                   for n in range(1, n_max + 1)])
    return VertexProfile(ts, E, Dl, F, dn, float(E.max()))


def volume_ratio(field, probe, X, shift=(1.0, 1.0), sign=1.0):
    """``J exp(sign (xi1 + xi2))`` at chart points ``X``.

    ``J`` and ``xi`` are taken in chart coordinates, with ``xi`` the
    gradient of ``u - shift . x``. On the flat model ``xi_i = log x_i`` and
    ``J = 1 / (x1 x2)``, so ``sign=+1`` gives exactly 1.
    """
    chart = ChartField(field, probe)
    X = np.asarray(X, float)
    _check_chart(chart, X)
    J = np.linalg.det(chart.hessian(X))
    xi = chart.gradient(X) - np.asarray(shift, float)
    return J * np.exp(sign * xi.sum(axis=-1))


def volume_bound_B(field, probe, radius, n=40, shift=(1.0, 1.0)):
    """``(sup, inf)`` of ``J exp(xi1 + xi2)`` on an ``n x n`` lattice of
    ``(0, radius]^2`` near the vertex; bounded above and below near a
    vertex of a solution, identically 1 on the flat model."""
    s = radius * (np.arange(1, n + 1) / n)
    X = np.stack(np.meshgrid(s, s, indexing="ij"), -1).reshape(-1, 2)
    ratio = volume_ratio(field, probe, X, shift)
    return float(ratio.max()), float(ratio.min())


# --------------------------------------------------------------------------
# sublevel slices near a vertex


@dataclass
class SublevelSlice:
    h: float
    xi: np.ndarray  # tangency abscissae on the two axes
    D: np.ndarray  # zeros of the tangent lines
    G: np.ndarray  # boundary deficit integrals
    area: float  # Area(Omega_h), polar quadrature
    area_nodes: float  # Area(Omega_h), node counting
    J: float  # int_Omega (u - envelope)


def _axis_derivative(U, t):
    d = 1e-4 * t
    return (U(t - 2 * d) - 8 * U(t - d) + 8 * U(t + d) - U(t + 2 * d)) / (12 * d)


def _axis_slice(chart, axis, h, t_max):
    e = np.eye(2)[axis]
    U = lambda t: float(chart.value(t * e))
    phi = lambda t: U(t) - t * _axis_derivative(U, t) - h
    lo = 1e-9 * t_max
    if phi(lo) * phi(t_max) > 0:
        raise ProbeOutside(f"level h={h} is not crossed on axis {axis + 1} within the patch")
    xi = brentq(phi, lo, t_max, xtol=1e-15 * t_max, rtol=1e-15)
    slope = _axis_derivative(U, xi)
    D = -h / slope
    G = quad(lambda t: U(t) - (h + slope * t), 0.0, xi, epsabs=1e-14, epsrel=1e-12,
             limit=200)[0]
    return xi, D, G


def sublevel_profile(field, probe, hs, radius, n_theta=64, n_r=64, n_count=400):
    """Sublevel data of ``phi = u - x . grad u`` near a vertex, per level h.

    Works in chart coordinates. ``Omega_h = {phi >= h}`` is star-shaped
    from the vertex; along each ray the envelope of u over ``{phi < h}``
    interpolates linearly between ``h`` at the vertex and ``u`` at the
    crossing radius ``R(theta)``, which gives ``J(h)`` and the area by
    polar Gauss quadrature.
    """
    chart = ChartField(field, probe)
    gx, gw = gauss_legendre01(n_theta)
    theta = 0.5 * np.pi * gx
    wth = 0.5 * np.pi * gw
    rx, rw = gauss_legendre01(n_r)
    dirs = np.column_stack([np.cos(theta), np.sin(theta)])
    cs = (np.arange(n_count) + 0.5) / n_count * radius
    lattice = np.stack(np.meshgrid(cs, cs, indexing="ij"), -1).reshape(-1, 2)
    _check_chart(chart, lattice)

    def phi(x):
        return chart.value(x) - np.sum(x * chart.gradient(x), axis=-1)

    phi_lattice = phi(lattice)
    out = []
    for h in hs:
        R = np.empty(n_theta)
        for k, d in enumerate(dirs):
            f = lambda r: float(phi(r * d)) - h
            if f(radius) > 0:
                raise ProbeOutside(f"level h={h} leaves the patch along theta={theta[k]:.3f}")
            R[k] = brentq(f, 1e-12 * radius, radius, xtol=1e-15 * radius, rtol=1e-15)
        area = float(wth @ (0.5 * R**2))
        Jh = 0.0
        for k, d in enumerate(dirs):
            r = R[k] * rx
            uR = float(chart.value(R[k] * d))
            u = chart.value(r[:, None] * d)
            Jh += wth[k] * R[k] * (rw @ ((u - h - (r / R[k]) * (uR - h)) * r))
        parts = [_axis_slice(chart, i, h, radius) for i in (0, 1)]
        xi, D, G = (np.array(v) for v in zip(*parts))
        area_nodes = float(np.sum(phi_lattice >= h)) * (radius / n_count) ** 2
        out.append(SublevelSlice(float(h), xi, D, G, area, area_nodes, float(Jh)))
    return out


# --------------------------------------------------------------------------
# convex envelope inequality


@dataclass
class EnvelopeCheck:
    lhs: float
    rhs: float
    slack: float
    area_outside: float
    notes: list = dc_field(default_factory=list)


def _plane_max(points, bases, values, grads, chunk=4096):
    out = np.full(len(points), -np.inf)
    for s in range(0, len(bases), chunk):
        B, V, G = bases[s:s + chunk], values[s:s + chunk], grads[s:s + chunk]
        lam = V[None] + np.einsum("pk,bk->pb", points, G) - np.sum(B * G, axis=1)[None]
        out = np.maximum(out, lam.max(axis=1))
    return out


def _boundary_refined(points, inward, h, levels):
    """Points approaching the boundary geometrically along ``inward``."""
    steps = h * 2.0 ** -np.arange(1, levels + 1)
    return (points[:, None, :] + steps[None, :, None] * inward).reshape(-1, 2)


def convex_envelope_check8(field, X, A=None, levels=30):
    """Both sides of ``int_dP (u - env_X) dsigma <= 2 Vol(P \\ X) + int_P A (u - env_X)``.

    ``X`` is a :class:`~abreukit.geometry.Polygon` (intersected with P) or a
    boolean mask callable on points. The envelope is the maximum of the
    supporting planes of u at the grid nodes of X, at points of the edges
    of X (the supremum over an open set is approached on its boundary) and
    at points approaching the boundary of P geometrically; on X itself it
    equals u.
    """
    g = field.grid
    P = field.polytope
    poly = P.polygon
    h = g.h
    A = P.A if A is None else A
    bases = []
    if isinstance(X, Polygon):
        lams = [_edge_affine(X, k) for k in range(len(X))]

        def inX(pts):
            pts = np.asarray(pts, float)
            return np.all(np.stack([lam(pts) > 0 for lam in lams]), axis=0)

        piece = clip_polygon(poly, lams)
        area_X = piece.area if piece is not None else 0.0
        if piece is not None:
            for a, b in piece.edges:
                m = max(2, int(np.ceil(np.linalg.norm(b - a) / (0.25 * h))))
                t = (np.arange(m) + 0.5) / m
                e = a + t[:, None] * (b - a)
                e = e[poly.margin(e) > 1e-9 * h]
                bases.append(e)
    else:
        inX = X
        area_X = None
    nodes = g.points[g.inside]
    bases.append(nodes[inX(nodes)])
    if sum(len(b) for b in bases) == 0:
        raise EmptyX("X contains no grid node")

    gx, gw = gauss_legendre01(4)
    bpts, bw, bnd_in = [], [], []
    for k, (a, b) in enumerate(poly.edges):
        L = poly.edge_lengths[k]
        m = int(np.ceil(L / (0.5 * h)))
        t = ((np.arange(m)[:, None] + gx[None, :]) / m).ravel()
        pts = a + t[:, None] * (b - a)
        bpts.append(pts)
        bw.append(np.tile(gw, m) * (L / m) * P.measure_density[k])
        inward = P.normals[k] / np.linalg.norm(P.normals[k])
        tc = (np.arange(m) + 0.5) / m
        coarse = a + tc[:, None] * (b - a)
        near = coarse[inX(coarse + 1e-9 * h * inward)]
        extra = _boundary_refined(near, inward, h, levels)
        bases.append(extra[inX(extra) & (poly.margin(extra) > 0)])
        bnd_in.append(np.broadcast_to(inward, (len(pts), 2)))
    bases = np.concatenate(bases)
    bpts, bw, bnd_in = np.concatenate(bpts), np.concatenate(bw), np.concatenate(bnd_in)
    vals = np.asarray(field.value(bases), float)
    grads = np.asarray(field.gradient(bases), float)

    def deficit(pts, own=None):
        out = np.zeros(len(pts))
        mask = ~inX(pts)
        q = pts[mask]
        if len(q):
            env = _plane_max(q, bases, vals, grads)
            if own is not None:
                env = np.maximum(env, own[mask])
            out[mask] = np.maximum(np.asarray(field.value(q), float) - env, 0.0)
        return out

    # a boundary point whose inside neighbourhood lies in X also sees the
    # planes along its own inward ray
    own = np.full(len(bpts), -np.inf)
    near = inX(bpts + 1e-9 * h * bnd_in) & ~inX(bpts)
    if np.any(near):
        steps = h * 2.0 ** -np.arange(1, levels + 1)
        b = bpts[near]
        rays = b[:, None, :] + steps[None, :, None] * bnd_in[near][:, None, :]
        rv = np.asarray(field.value(rays), float)
        rg = np.asarray(field.gradient(rays), float)
        planes = rv + np.einsum("pk,plk->pl", b, rg) - np.sum(rays * rg, axis=-1)
        own[near] = planes.max(axis=1)
    lhs = float(bw @ deficit(bpts, own))
    apts, aw = g._apts, g._aw
    area_term = float(aw @ deficit(apts))
    if area_X is None:
        area_X = float(aw @ inX(apts))
    outside = poly.area - area_X
    rhs = 2.0 * outside + A * area_term
    return EnvelopeCheck(lhs, rhs, rhs - lhs, outside)


def _edge_affine(X, k):
    a, b = X.edges[k]
    d = b - a
    n = np.array([-d[1], d[0]])  # inward for CCW polygons
    return AffineFunction(n[0], n[1], -n @ a)


# --------------------------------------------------------------------------
# Riemannian length


def _quadratic_form(field, x, v):
    qf = getattr(field, "quadratic_form", None)
    if qf is not None:
        return qf(x, v)
    H = np.asarray(field.hessian(x), float)
    vv = v[..., :, None] * v[..., None, :]
    with np.errstate(invalid="ignore"):
        terms = np.where(vv == 0, 0.0, H * vv)
    return terms.sum(axis=(-1, -2))


def _segment_length(field, a, b, n, singular):
    """Length of ``a -> b``; ``singular`` ends use ``s = tau^2`` substitution."""
    d = b - a
    if not singular[0] and not singular[1]:
        s = np.linspace(0, 1, n + 1)
        f = np.sqrt(_quadratic_form(field, a + s[:, None] * d, np.broadcast_to(d, (n + 1, 2))))
        w = np.ones(n + 1)
        w[1:-1:2], w[2:-1:2] = 4, 2
        return float(w @ f) / (3 * n)
    # split at the midpoint and map each singular end to tau^2
    total = 0.0
    gx, gw = gauss_legendre01(n)
    for end, start, other in ((0, a, b), (1, b, a)):
        half = 0.5 * (other - start)
        if singular[end]:
            tau = gx
            pts = start + (tau**2)[:, None] * half
            q = _quadratic_form(field, pts, np.broadcast_to(half, (n, 2)))
            total += float(gw @ (np.sqrt(q) * 2 * tau))
        else:
            pts = start + gx[:, None] * half
            q = _quadratic_form(field, pts, np.broadcast_to(half, (n, 2)))
            total += float(gw @ np.sqrt(q))
    return total


def riemannian_length(field, path, n=256):
    """``int sqrt(x' u_ij x') ds`` along a polyline in the closed domain."""
    path = np.asarray(path, float)
    if path.ndim != 2 or len(path) < 2:
        raise ValueError("path needs at least two points")
    m = _margin(field, path)
    if np.any(m < -PROBE_TOL):
        raise PathOutside("path leaves the domain")
    on_bd = np.abs(m) <= PROBE_TOL
    total = 0.0
    for k in range(len(path) - 1):
        a, b = path[k], path[k + 1]
        mid = _margin(field, 0.5 * (a + b))
        if mid < -PROBE_TOL:
            raise PathOutside("path leaves the domain")
        if on_bd[k] and on_bd[k + 1] and abs(mid) <= PROBE_TOL:
            # along an edge the metric is the tangential second derivative,
            # singular only at a vertex
            with np.errstate(divide="ignore", invalid="ignore"):
                q = _quadratic_form(field, np.stack([a, b]), np.stack([b - a, b - a]))
            total += _segment_length(field, a, b, n, tuple(bool(~np.isfinite(v)) for v in q))
        else:
            total += _segment_length(field, a, b, n, (bool(on_bd[k]), bool(on_bd[k + 1])))
    return total
