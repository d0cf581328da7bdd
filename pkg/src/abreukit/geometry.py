"""Exact geometric and integral primitives on convex polygons.

Polynomials are passed as 2-D coefficient arrays ``c`` with ``c[i, j]`` the
coefficient of ``x1**i * x2**j`` (the :func:`numpy.polynomial.polynomial.polyval2d`
convention).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ._quadrature import gauss_legendre01
from .errors import DegenerateEdge, IrrationalNormal, NonConvex, NonPositiveWeight

VERTEX_RTOL = 1e-12
RATIONAL_TOL = 1e-9
MAX_DENOMINATOR = 10**6
# lattice edges used for the boundary measure must have small primitive normals
MEASURE_MAX_DENOMINATOR = 1000


@dataclass(frozen=True)
class AffineFunction:
    """lambda(x) = a1*x1 + a2*x2 + b."""

    a1: float
    a2: float
    b: float

    def __call__(self, x):
        x = np.asarray(x, float)
        return self.a1 * x[..., 0] + self.a2 * x[..., 1] + self.b

    @property
    def gradient(self):
        return np.array([self.a1, self.a2])

    def __neg__(self):
        return AffineFunction(-self.a1, -self.a2, -self.b)

    def scaled(self, s):
        return AffineFunction(s * self.a1, s * self.a2, s * self.b)

    def coefficients(self):
        """Polynomial coefficient array of this function."""
        c = np.zeros((2, 2))
        c[0, 0], c[1, 0], c[0, 1] = self.b, self.a1, self.a2
        return c

    def is_zero(self):
        return self.a1 == 0 and self.a2 == 0 and self.b == 0


def monomial(i, j, coeff=1.0):
    c = np.zeros((i + 1, j + 1))
    c[i, j] = coeff
    return c


def _cross(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


class Polygon:
    """Strictly convex polygon with counter-clockwise vertices."""

    def __init__(self, vertices):
        v = np.array(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise NonConvex("a polygon needs at least 3 vertices in the plane")
        if not np.all(np.isfinite(v)):
            raise NonConvex("vertex coordinates must be finite")
        diam = float(np.max(np.linalg.norm(v[:, None] - v[None], axis=-1)))
        if diam == 0:
            raise DegenerateEdge("all vertices coincide")
        e = np.roll(v, -1, axis=0) - v
        lengths = np.linalg.norm(e, axis=1)
        if np.any(lengths <= VERTEX_RTOL * diam):
            raise DegenerateEdge("repeated vertex")
        turn = _cross(e, np.roll(e, -1, axis=0))
        if np.any(turn <= VERTEX_RTOL * diam**2):
            raise NonConvex("vertices must form a strictly convex counter-clockwise polygon")
        # a star-shaped self-intersecting loop also turns left everywhere
        total = np.sum(np.arctan2(turn, np.sum(e * np.roll(e, -1, axis=0), axis=1)))
        if not math.isclose(total, 2 * math.pi, abs_tol=1e-6):
            raise NonConvex("polygon winds more than once")
        self.vertices = v
        self.vertices.setflags(write=False)
        self.diameter = diam
        self.edge_vectors = e
        self.edge_lengths = lengths
        # inward unit normal: rotate the CCW edge direction by +90 degrees
        self.unit_normals = np.stack([-e[:, 1], e[:, 0]], axis=1) / lengths[:, None]

    def __len__(self):
        return len(self.vertices)

    def __repr__(self):
        return f"Polygon({self.vertices.tolist()})"

    @property
    def edges(self):
        """List of ``(start, end)`` vertex pairs; edge k joins vertex k to k+1."""
        v = self.vertices
        return [(v[k], v[(k + 1) % len(v)]) for k in range(len(v))]

    @property
    def area(self):
        v = self.vertices
        return 0.5 * float(np.sum(_cross(v, np.roll(v, -1, axis=0))))

    @property
    def centroid(self):
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        cr = _cross(v, w)
        return np.sum((v + w) * cr[:, None], axis=0) / (6.0 * self.area)

    def edge_distances(self, x):
        """Signed Euclidean distance from x to each edge line, positive inside."""
        x = np.asarray(x, float)
        d = x[..., None, :] - self.vertices
        return np.sum(d * self.unit_normals, axis=-1)

    def margin(self, x):
        """min over edges of the signed distance; > 0 in the open polygon."""
        return self.edge_distances(x).min(axis=-1)

    def contains(self, x, tol=0.0):
        return self.margin(x) >= -tol

    def support(self, direction):
        """Range (min, max) of ``direction . x`` over the polygon."""
        s = self.vertices @ np.asarray(direction, float)
        return float(s.min()), float(s.max())


def primitive_integer_vector(d, tol=RATIONAL_TOL, max_den=MAX_DENOMINATOR):
    """Primitive integer vector parallel to ``d`` (same orientation), or None."""
    d = np.asarray(d, float)
    k = int(np.argmax(np.abs(d)))
    if d[k] == 0:
        return None
    r = d[1 - k] / d[k]
    fr = Fraction(r).limit_denominator(max_den)
    if abs(float(fr) - r) > tol:
        return None
    vec = [0, 0]
    vec[k] = fr.denominator
    vec[1 - k] = fr.numerator
    vec = np.array(vec, dtype=np.int64)
    if np.sign(vec[k]) != np.sign(d[k]):
        vec = -vec
    return vec


@dataclass(eq=False)
class Polytope:
    """Polygon with per-edge boundary weights and scalar curvature constant A.

    Edge k carries the measure ``w_k`` times lattice-normalised arc length when
    its normal is rational, Euclidean arc length otherwise (flagged in
    ``euclidean_edges``).
    """

    polygon: Polygon
    edge_weights: np.ndarray
    A: float
    normals: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)
    euclidean_edges: tuple = ()

    @property
    def n_edges(self):
        return len(self.polygon)

    @property
    def normal_norms(self):
        return np.linalg.norm(self.normals, axis=1)

    @property
    def measure_density(self):
        """dsigma / (Euclidean arc length) on each edge."""
        return self.edge_weights / self.normal_norms

    def ell(self, x):
        """Affine defining functions l_k(x) = n_k . x - offset_k, shape (..., n_edges)."""
        x = np.asarray(x, float)
        return x @ self.normals.T - self.offsets

    @property
    def boundary_mass(self):
        return float(np.sum(self.measure_density * self.polygon.edge_lengths))


def _edge_normals(polygon):
    normals = []
    euclid = []
    for k, (a, b) in enumerate(polygon.edges):
        inward = np.array([-(b - a)[1], (b - a)[0]])
        n = primitive_integer_vector(inward, max_den=MEASURE_MAX_DENOMINATOR)
        if n is None:
            normals.append(inward / np.linalg.norm(inward))
            euclid.append(k)
        else:
            normals.append(n.astype(float))
    normals = np.array(normals)
    offsets = np.einsum("ij,ij->i", normals, polygon.vertices)
    return normals, offsets, tuple(euclid)


def build_polytope(vertices, weights, A="auto"):
    """Validated :class:`Polytope` from vertex list, edge weights and A.

    ``A="auto"`` sets A = sigma(boundary) / Area, the mass-matching value.
    """
    polygon = vertices if isinstance(vertices, Polygon) else Polygon(vertices)
    w = np.array(weights, dtype=float).reshape(-1)
    if len(w) != len(polygon):
        raise DegenerateEdge(f"expected {len(polygon)} edge weights, got {len(w)}")
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise NonPositiveWeight("edge weights must be positive")
    normals, offsets, euclid = _edge_normals(polygon)
    if euclid:
        warnings.warn(
            f"edges {list(euclid)} have no rational normal; using Euclidean arc length",
            stacklevel=2,
        )
    P = Polytope(polygon, w, 0.0, normals, offsets, euclid)
    if isinstance(A, str):
        if A != "auto":
            raise ValueError(f"A must be a number or 'auto', got {A!r}")
        P.A = P.boundary_mass / polygon.area
    else:
        P.A = float(A)
    return P


# --------------------------------------------------------------------------
# polynomial quadrature


def _polymul2(a, b):
    out = np.zeros((a.shape[0] + b.shape[0] - 1, a.shape[1] + b.shape[1] - 1))
    for i, j in zip(*np.nonzero(a)):
        out[i : i + b.shape[0], j : j + b.shape[1]] += a[i, j] * b
    return out


def compose_affine(c, origin, e1, e2):
    """Coefficients in (s, t) of p(origin + s*e1 + t*e2)."""
    c = np.atleast_2d(np.asarray(c, float))
    x1 = np.array([[origin[0], e2[0]], [e1[0], 0.0]])
    x2 = np.array([[origin[1], e2[1]], [e1[1], 0.0]])
    deg = c.shape[0] + c.shape[1] - 2
    out = np.zeros((deg + 1, deg + 1))
    pow1 = [np.ones((1, 1))]
    for _ in range(c.shape[0] - 1):
        pow1.append(_polymul2(pow1[-1], x1))
    pow2 = [np.ones((1, 1))]
    for _ in range(c.shape[1] - 1):
        pow2.append(_polymul2(pow2[-1], x2))
    for i, j in zip(*np.nonzero(c)):
        term = c[i, j] * _polymul2(pow1[i], pow2[j])
        out[: term.shape[0], : term.shape[1]] += term
    return out


def _simplex_moment(a, b):
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


def integrate_triangle_poly(p0, p1, p2, c):
    p0, p1, p2 = (np.asarray(p, float) for p in (p0, p1, p2))
    e1, e2 = p1 - p0, p2 - p0
    jac = abs(_cross(e1, e2))
    st = compose_affine(c, p0, e1, e2)
    total = 0.0
    for a, b in zip(*np.nonzero(st)):
        total += st[a, b] * _simplex_moment(a, b)
    return jac * total


def integrate_region_poly(polygon, c):
    """Exact integral of a polynomial over a convex polygon.

    Fan triangulation from the centroid and closed-form simplex moments.
    """
    if polygon is None:
        return 0.0
    g = polygon.centroid
    v = polygon.vertices
    return sum(
        integrate_triangle_poly(g, v[k], v[(k + 1) % len(v)], c) for k in range(len(v))
    )


def _poly_degree(c):
    c = np.atleast_2d(c)
    return c.shape[0] + c.shape[1] - 2


def integrate_segment_poly(a, b, c, measure=1.0):
    """measure * integral over t in [0,1] of p(a + t(b - a)); exact."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    n = _poly_degree(c) // 2 + 1
    t, w = gauss_legendre01(max(n, 2))
    pts = a + t[:, None] * (b - a)
    return measure * float(w @ np.polynomial.polynomial.polyval2d(pts[:, 0], pts[:, 1], c))


def integrate_boundary_poly(polytope, c):
    """Exact sum_k w_k * integral over edge k of p, in the polytope's measure."""
    lengths = polytope.polygon.edge_lengths
    dens = polytope.measure_density
    return sum(
        integrate_segment_poly(a, b, c, dens[k] * lengths[k])
        for k, (a, b) in enumerate(polytope.polygon.edges)
    )


# --------------------------------------------------------------------------
# clipping


def _cleanup(points, scale):
    """Drop near-duplicate and collinear points of a convex loop."""
    pts = [np.asarray(p, float) for p in points]
    tol = VERTEX_RTOL * scale
    changed = True
    while changed and len(pts) >= 3:
        changed = False
        out = []
        for i, p in enumerate(pts):
            if out and np.linalg.norm(p - out[-1]) <= tol:
                changed = True
                continue
            out.append(p)
        if len(out) > 1 and np.linalg.norm(out[0] - out[-1]) <= tol:
            out.pop()
            changed = True
        pts = out
        if len(pts) < 3:
            break
        keep = []
        n = len(pts)
        for i in range(n):
            prev, cur, nxt = pts[i - 1], pts[i], pts[(i + 1) % n]
            if _cross(cur - prev, nxt - cur) > tol * scale:
                keep.append(cur)
            else:
                changed = True
        pts = keep
    return pts


def clip_halfplane(polygon, lam):
    """Convex polygon ``P ∩ {lam >= 0}``, or None when it has no interior.

    Single-plane Sutherland-Hodgman; vertices on the line are kept.
    """
    v = polygon.vertices
    vals = lam(v)
    if np.all(vals >= 0):
        return polygon
    if np.all(vals <= 0):
        return None
    out = []
    n = len(v)
    for k in range(n):
        p, q = v[k], v[(k + 1) % n]
        fp, fq = vals[k], vals[(k + 1) % n]
        if fp >= 0:
            out.append(p)
        if (fp > 0 and fq < 0) or (fp < 0 and fq > 0):
            t = fp / (fp - fq)
            out.append(p + t * (q - p))
    pts = _cleanup(out, polygon.diameter)
    if len(pts) < 3:
        return None
    try:
        return Polygon(pts)
    except (NonConvex, DegenerateEdge):
        return None


def clip_segment(a, b, lam):
    """Sub-segment of [a, b] where lam >= 0, or None."""
    fa, fb = lam(a), lam(b)
    if fa >= 0 and fb >= 0:
        return a, b
    if fa < 0 and fb < 0:
        return None
    t = fa / (fa - fb)
    m = a + t * (b - a)
    if fa >= 0:
        return (a, m) if t > 0 else None
    return (m, b) if t < 1 else None


def clip_polygon(polygon, lams):
    """Intersect a polygon with several closed half-planes."""
    out = polygon
    for lam in lams:
        if out is None:
            return None
        out = clip_halfplane(out, lam)
    return out


# --------------------------------------------------------------------------
# lattice checks


def is_delzant(polytope):
    """Check the Delzant condition; returns ``(ok, report)``.

    Raises :class:`IrrationalNormal` when an edge normal is not rational
    within 1e-9 with denominator at most 1e6.
    """
    normals = []
    for k, (a, b) in enumerate(polytope.polygon.edges):
        inward = np.array([-(b - a)[1], (b - a)[0]])
        n = primitive_integer_vector(inward)
        if n is None:
            raise IrrationalNormal(f"edge {k} has no rational normal")
        normals.append(n)
    dets = []
    m = len(normals)
    for k in range(m):
        n_prev, n_next = normals[k - 1], normals[k]
        dets.append(int(n_prev[0] * n_next[1] - n_prev[1] * n_next[0]))
    ok = all(abs(d) == 1 for d in dets)
    report = {
        "normals": [tuple(int(x) for x in n) for n in normals],
        "vertex_determinants": dets,
        "bad_vertices": [k for k, d in enumerate(dets) if abs(d) != 1],
    }
    return ok, report
