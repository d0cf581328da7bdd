"""The linear functional L_{A,sigma} and the hinge-function positivity scan.

``L(f) = int_{dP} f dsigma - A int_P f dmu``. For compatible data L kills
affine functions, and positivity of L on hinge functions ``max(0, lambda)``
decides whether a constant scalar curvature potential can exist.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NotStable, ZeroHinge
from .geometry import (
    AffineFunction,
    clip_halfplane,
    clip_segment,
    integrate_boundary_poly,
    integrate_region_poly,
    integrate_segment_poly,
    monomial,
)

HINGE_REDUCTION_NOTE = (
    "stable verdict assumes positivity on single-crease hinge functions "
    "implies positivity on all convex functions"
)


@dataclass(frozen=True)
class HingeFunction:
    lam: AffineFunction
    normalization: str = "raw"  # or "boundary_mass_one"

    def __call__(self, x):
        return np.maximum(self.lam(x), 0.0)


def evaluate_L(polytope, coeffs, A=None):
    """L applied to a polynomial, exact."""
    A = polytope.A if A is None else A
    return integrate_boundary_poly(polytope, coeffs) - A * integrate_region_poly(
        polytope.polygon, coeffs
    )


def determine_A_and_futaki(polytope):
    """Mass-matching A and the residuals L(1), L(x1), L(x2) at that A."""
    A = polytope.boundary_mass / polytope.polygon.area
    residual = np.array(
        [evaluate_L(polytope, monomial(*ij), A) for ij in [(0, 0), (1, 0), (0, 1)]]
    )
    return A, residual


def futaki_residual(polytope, A=None):
    A = polytope.A if A is None else A
    return np.array(
        [evaluate_L(polytope, monomial(*ij), A) for ij in [(0, 0), (1, 0), (0, 1)]]
    )


def futaki_tolerance(polytope):
    return 1e-9 * polytope.boundary_mass * polytope.polygon.diameter


def hinge_boundary_mass(polytope, lam):
    """int over dP of lambda^+ dsigma (the crease itself carries no measure)."""
    total = 0.0
    dens = polytope.measure_density
    for k, (a, b) in enumerate(polytope.polygon.edges):
        seg = clip_segment(a, b, lam)
        if seg is None:
            continue
        p, q = seg
        total += integrate_segment_poly(p, q, lam.coefficients(), dens[k] * np.linalg.norm(q - p))
    return total


def evaluate_L_hinge(polytope, lam):
    """Exact L(lambda^+) via half-plane clipping and polynomial quadrature."""
    piece = clip_halfplane(polytope.polygon, lam)
    if piece is None:
        raise ZeroHinge("lambda^+ vanishes identically on P")
    interior = integrate_region_poly(piece, lam.coefficients())
    return hinge_boundary_mass(polytope, lam) - polytope.A * interior


def hinge_values(polytope, normals, offsets):
    """Vectorised ``(L, B)`` for lambda = n.x - c over arrays of (n, c).

    ``B`` is the boundary mass of lambda^+. Rows whose crease misses the
    polygon interior give ``B = 0`` and ``L = 0``.
    """
    normals = np.atleast_2d(np.asarray(normals, float))
    offsets = np.atleast_1d(np.asarray(offsets, float))
    V = polytope.polygon.vertices
    Wn = np.roll(V, -1, axis=0)
    fa = normals @ V.T - offsets[:, None]  # (m, K)
    fb = normals @ Wn.T - offsets[:, None]
    cross = (fa >= 0) != (fb >= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        tstar = np.where(cross, fa / (fa - fb), 0.0)
    t0 = np.where(fa >= 0, 0.0, tstar)
    t1 = np.where(fb >= 0, 1.0, tstar)
    empty = (fa < 0) & (fb < 0)
    t0 = np.where(empty, 0.0, t0)
    t1 = np.where(empty, 0.0, t1)
    E = (Wn - V)[None]  # (1, K, 2)
    P0 = V[None] + t0[..., None] * E
    P1 = V[None] + t1[..., None] * E
    l0 = fa + t0 * (fb - fa)
    l1 = fa + t1 * (fb - fa)
    seg_len = (t1 - t0) * polytope.polygon.edge_lengths[None]
    B = np.sum(polytope.measure_density[None] * seg_len * 0.5 * (l0 + l1), axis=1)

    def green(p, q):
        cr = p[..., 0] * q[..., 1] - p[..., 1] * q[..., 0]
        return 0.5 * cr, (p[..., 0] + q[..., 0]) * cr / 6.0, (p[..., 1] + q[..., 1]) * cr / 6.0

    a, mx, my = (s.sum(axis=1) for s in green(P0, P1))
    exit_mask = (fa >= 0) & (fb < 0)
    entry_mask = (fa < 0) & (fb >= 0)
    X = np.sum(np.where(exit_mask[..., None], V[None] + tstar[..., None] * E, 0.0), axis=1)
    Y = np.sum(np.where(entry_mask[..., None], V[None] + tstar[..., None] * E, 0.0), axis=1)
    has_crease = exit_mask.any(axis=1) & entry_mask.any(axis=1)
    ca, cx, cy = green(X, Y)
    a = a + np.where(has_crease, ca, 0.0)
    mx = mx + np.where(has_crease, cx, 0.0)
    my = my + np.where(has_crease, cy, 0.0)
    interior = normals[:, 0] * mx + normals[:, 1] * my - offsets * a
    L = B - polytope.A * interior
    return L, B


@dataclass
class ScanConfig:
    n_angles: int = 720
    n_offsets: int = 256
    n_candidates: int = 8
    step_rtol: float = 1e-6


@dataclass
class StabilityReport:
    A_used: float
    futaki_residual: np.ndarray
    min_L: float
    argmin_lambda: Optional[HingeFunction]
    status: str  # stable | destabilized | inconclusive
    C_estimate: float
    notes: list = field(default_factory=list)
    theta: Optional[np.ndarray] = field(default=None, repr=False)
    offset_fraction: Optional[np.ndarray] = field(default=None, repr=False)
    grid_values: Optional[np.ndarray] = field(default=None, repr=False)

    def write_grid_csv(self, path):
        """Dump the coarse (theta, c, L) grid for plotting."""
        if self.grid_values is None:
            raise ValueError("report carries no grid")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["theta", "offset", "L_normalized"])
            for i, th in enumerate(self.theta):
                for j in range(self.grid_values.shape[1]):
                    w.writerow([f"{th:.12g}", f"{self.grid_offsets[i, j]:.12g}",
                                f"{self.grid_values[i, j]:.12g}"])


def _offset_range(polytope, normals):
    """Offsets from the centroid level up to the far support value."""
    V = polytope.polygon.vertices
    c0 = normals @ polytope.polygon.centroid
    cmax = (normals @ V.T).max(axis=1)
    return c0, cmax


def _unit(theta):
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def _normalized_L(polytope, theta, c):
    L, B = hinge_values(polytope, _unit(np.atleast_1d(theta)), np.atleast_1d(c))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(B > 0, L / B, np.inf), B


def _refine(polytope, theta, c, value, step_theta, step_c, tol):
    """Coordinate descent on (theta, c) with step halving."""
    diam = polytope.polygon.diameter

    def f(th, cc):
        n = _unit(np.array([th]))
        c0, cmax = _offset_range(polytope, n)
        span = cmax[0] - c0[0]
        cc = min(max(cc, c0[0]), cmax[0] - 1e-9 * span)
        v, _ = _normalized_L(polytope, th, cc)
        return float(v[0]), cc

    while step_theta * diam >= tol or step_c >= tol:
        improved = False
        for dth, dc in ((step_theta, 0.0), (-step_theta, 0.0), (0.0, step_c), (0.0, -step_c)):
            if (dth and step_theta * diam < tol) or (dc and step_c < tol):
                continue
            v, cc = f(theta + dth, c + dc)
            if v < value:
                theta, c, value = theta + dth, cc, v
                improved = True
                break
        if not improved:
            step_theta *= 0.5
            step_c *= 0.5
    return theta % (2 * np.pi), c, value


def scan_positivity(polytope, config=None):
    """Scan normalised L(lambda^+) over creases and report the verdict.

    Creases are parametrised by the angle of the unit normal and an offset
    running from the centroid level to the far support value, so every
    crease line is visited once with its positive side away from the
    centroid. Values are ``L(lambda^+) / int_{dP} lambda^+ dsigma``.
    """
    config = config or ScanConfig()
    res = futaki_residual(polytope)
    tol = futaki_tolerance(polytope)
    notes = [HINGE_REDUCTION_NOTE]
    if np.max(np.abs(res)) > tol:
        notes.append(
            f"moment residual {np.max(np.abs(res)):.3e} exceeds tolerance {tol:.3e}; "
            "data are not compatible with a constant A"
        )
        return StabilityReport(polytope.A, res, np.nan, None, "inconclusive", np.nan, notes)

    theta = 2 * np.pi * np.arange(config.n_angles) / config.n_angles
    frac = np.arange(config.n_offsets) / config.n_offsets
    n = _unit(theta)
    c0, cmax = _offset_range(polytope, n)
    C = c0[:, None] + frac[None, :] * (cmax - c0)[:, None]
    TH = np.repeat(theta, config.n_offsets)
    vals, _ = _normalized_L(polytope, TH, C.reshape(-1))
    grid = vals.reshape(config.n_angles, config.n_offsets)

    order = np.argsort(vals, kind="stable")
    step_theta = 2 * np.pi / config.n_angles
    tol_len = config.step_rtol * polytope.polygon.diameter
    best = None
    for idx in order[: config.n_candidates]:
        i, j = divmod(int(idx), config.n_offsets)
        step_c = (cmax[i] - c0[i]) / config.n_offsets
        th, c, v = _refine(polytope, theta[i], C[i, j], vals[idx], step_theta, step_c, tol_len)
        key = (v, th, c)
        if best is None or key < best:
            best = key
    v, th, c = best
    nrm = _unit(np.array(th))
    lam = AffineFunction(nrm[0], nrm[1], -c)
    _, B = hinge_values(polytope, nrm[None], np.array([c]))
    hinge = HingeFunction(lam.scaled(1.0 / B[0]), "boundary_mass_one")
    if v > 0:
        status, C_est = "stable", 1.0 / v
    else:
        status, C_est = "destabilized", np.inf
    rep = StabilityReport(polytope.A, res, v, hinge, status, C_est, notes, theta, frac, grid)
    rep.grid_offsets = C
    return rep


def stability_constant_estimate(polytope, report):
    """Lower bound for the constant C with int f dsigma <= C L(f).

    Equal to 1 / min_L over the scanned boundary-mass-normalised hinges.
    """
    if report.status != "stable" or not report.min_L > 0:
        raise NotStable(f"scan status is {report.status!r} (min_L = {report.min_L})")
    return 1.0 / report.min_L
