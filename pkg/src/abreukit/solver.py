"""Minimisation of the discrete functional M over grid corrections f."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import FutakiGateError, InfeasibleStart, OutsidePolygon
from .potential import (
    Grid,
    PotentialField,
    _inv2,
    _is_pd,
    abreu_residual,
    correction_functional,
    L_of_potential,
    mabuchi_M,
    max_V_norm,
)
from .stability import futaki_residual, futaki_tolerance

log = logging.getLogger(__name__)

ROUNDOFF_DECREMENT = 1e-12


@dataclass
class SolverConfig:
    N: int = 64
    gtol: float = 1e-8  # on max |dM/df_n| / h^2, i.e. in residual units
    max_iters: int = 200
    shrink: float = 0.5
    c1: float = 1e-4
    method: str = "newton"  # or "gradient"
    collar: float = 2.0
    max_backtracks: int = 60

    def __post_init__(self):
        if self.N < 16:
            raise ValueError("grid size N must be at least 16")
        if not (self.gtol > 0 and self.c1 > 0 and 0 < self.shrink < 1):
            raise ValueError("tolerances must be positive and 0 < shrink < 1")
        if self.method not in ("newton", "gradient"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class SolverResult:
    potential: PotentialField
    M_history: list
    residual_field: np.ndarray
    max_residual: float
    status: str  # converged | max_iters | infeasible_start
    iterations: int = 0
    grad_norm: float = np.nan
    elapsed: float = 0.0
    notes: list = field(default_factory=list)


def discrete_gradient(grid, f, H=None):
    """Exact gradient of the discrete M with respect to the unknowns."""
    if H is None:
        H = PotentialField(grid, f).quad_hessians()
    inv, _ = _inv2(H)
    w = grid.q_weights
    return grid.c - (
        grid.Q11.T @ (w * inv[:, 0, 0])
        + grid.Q22.T @ (w * inv[:, 1, 1])
        + 2.0 * (grid.Q12.T @ (w * inv[:, 0, 1]))
    )


def discrete_hessian(grid, H):
    """Sparse Hessian of the discrete M (positive semidefinite)."""
    inv, _ = _inv2(H)
    a, b, c = inv[:, 0, 0], inv[:, 0, 1], inv[:, 1, 1]
    Q = [[a * a, b * b, 2 * a * b],
         [b * b, c * c, 2 * b * c],
         [2 * a * b, 2 * b * c, 2 * (a * c + b * b)]]
    D = [grid.Q11, grid.Q22, grid.Q12]
    w = grid.q_weights
    K = None
    for i in range(3):
        for j in range(3):
            term = D[i].T @ sp.diags(w * Q[i][j]) @ D[j]
            K = term if K is None else K + term
    return K.tocsc()


def _gauge_nodes(grid):
    """Three well-spread unknown nodes used to pin the affine gauge."""
    poly = grid.polytope.polygon
    g = poly.centroid
    r = 0.25 * min(np.ptp(poly.vertices[:, 0]), np.ptp(poly.vertices[:, 1]))
    targets = np.array([g, g + [r, 0], g + [0, r]])
    ids = grid.nearest_unknown(targets)
    if len(set(ids.tolist())) < 3:
        raise ValueError("grid too coarse to fix the affine gauge")
    return ids


def _newton_direction(grid, H, grad, pinned):
    K = discrete_hessian(grid, H)
    keep = np.ones(grid.n_unknown, bool)
    keep[pinned] = False
    idx = np.flatnonzero(keep)
    Kr = K[idx][:, idx]
    # the pinned Hessian is positive definite, so symmetric mode without
    # pivoting is safe and keeps the fill of a Cholesky factor
    lu = spla.splu(Kr.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                   options=dict(SymmetricMode=True))
    d = np.zeros(grid.n_unknown)
    d[idx] = lu.solve(-grad[idx])
    return grid.remove_affine(d)


def minimize_M(polytope, config=None, f0=None, grid=None, callback=None):
    """Minimise the discrete M starting from ``u0 + f0``.

    Damped Newton (default) or plain gradient descent, both with Armijo
    backtracking that rejects steps leaving the positive-definite cone.
    The affine part of f is projected out after every step.
    """
    config = config or SolverConfig()
    res = futaki_residual(polytope)
    tol = futaki_tolerance(polytope)
    if np.max(np.abs(res)) > tol:
        raise FutakiGateError(
            f"moment residual {np.max(np.abs(res)):.3e} exceeds tolerance {tol:.3e}; "
            "L does not vanish on affine functions, no solution with constant A"
        )
    t_start = time.perf_counter()
    grid = grid or Grid(polytope, config.N, collar=config.collar)
    f = np.zeros(grid.n_unknown) if f0 is None else grid.remove_affine(np.asarray(f0, float))
    field_ = PotentialField(grid, f)
    H = field_.quad_hessians()
    if not np.all(_is_pd(H)):
        raise InfeasibleStart("initial potential u0 + f0 is not convex on the grid")
    value = correction_functional(grid, f, H)
    M0 = grid.canonical_M[0]
    history = [M0 + value]
    pinned = _gauge_nodes(grid) if config.method == "newton" else None
    h2 = grid.h**2
    status = "max_iters"
    notes = []
    alpha_gd = 1.0
    it = 0
    gnorm = np.inf
    for it in range(config.max_iters + 1):
        grad = grid._project(discrete_gradient(grid, f, H))
        gnorm = float(np.max(np.abs(grad)) / h2)
        if callback is not None:
            callback(it, M0 + value, gnorm)
        if gnorm < config.gtol:
            status = "converged"
            break
        if it == config.max_iters:
            break
        if config.method == "newton":
            d = _newton_direction(grid, H, grad, pinned)
            alpha = 1.0
        else:
            d = -grad / h2
            alpha = alpha_gd
        slope = float(grad @ d)
        if slope >= 0:
            d, slope = -grad / h2, -float(grad @ grad) / h2
        accepted = False
        for _ in range(config.max_backtracks):
            fn = f + alpha * d
            Hn = PotentialField(grid, fn).quad_hessians()
            if np.all(_is_pd(Hn)):
                vn = correction_functional(grid, fn, Hn)
                if vn <= value + config.c1 * alpha * slope and vn < value:
                    accepted = True
                    break
            alpha *= config.shrink
        if not accepted and -slope <= ROUNDOFF_DECREMENT * max(1.0, abs(history[-1])):
            # the predicted decrease is below what M can resolve in floating point
            status = "converged"
            notes.append(
                f"stopped at iteration {it}: predicted decrease {-slope:.1e} below round-off "
                f"(gradient {gnorm:.3e})"
            )
            break
        if not accepted:
            notes.append(
                f"line search stalled at iteration {it} with gradient {gnorm:.3e} "
                "(decrease below round-off)"
            )
            break
        f, H, value = grid.remove_affine(fn), Hn, vn
        history.append(M0 + value)
        if config.method == "gradient":
            alpha_gd = min(alpha * 2.0, 1e6)
        log.debug("iter %d  M=%.15g  |g|/h^2=%.3e  alpha=%.3g", it, history[-1], gnorm, alpha)
    field_ = PotentialField(grid, f)
    residual = abreu_residual(field_)
    finite = residual[np.isfinite(residual)]
    max_res = float(np.max(np.abs(finite))) if finite.size else np.nan
    return SolverResult(field_, history, residual, max_res, status, it, gnorm,
                        time.perf_counter() - t_start, notes)


@dataclass
class ResidualSummary:
    max_residual: float
    L_of_u: float
    identity_slack: Optional[float]
    max_V: float
    M: float
    status: str
    notes: list = field(default_factory=list)


def residual_report(result, closed_domain=True):
    """Residual, the ``L(u) = 2 Area(P)`` identity slack and max |V|.

    ``closed_domain=False`` (a truncated model patch) skips the identity.
    """
    fld = result.potential
    area = fld.polytope.polygon.area
    Lu = L_of_potential(fld)
    notes = []
    slack = None
    if closed_domain:
        slack = abs(Lu - 2.0 * area)
    else:
        notes.append("identity L(u) = 2 Area(P) needs a closed polygon; not applicable")
    return ResidualSummary(result.max_residual, Lu, slack, max_V_norm(fld), mabuchi_M(fld),
                           result.status, notes)


def affine_normalize(field, p0):
    """Subtract the supporting affine function of u at ``p0``.

    The result is a callable-compatible field with ``u(p0) = 0`` and
    ``grad u(p0) = 0``; for a convex u it is nonnegative.
    """
    p0 = np.asarray(p0, float)
    if not field.domain_margin(p0) > 0:
        raise OutsidePolygon(f"normalisation point {p0.tolist()} is not interior")
    return NormalizedField(field, p0)


class NormalizedField:
    """``u - u(p0) - grad u(p0).(x - p0)`` for any field-like object."""

    def __init__(self, base, p0):
        self.base = base
        self.p0 = np.asarray(p0, float)
        self.v0 = float(base.value(self.p0))
        self.g0 = np.asarray(base.gradient(self.p0), float)

    def value(self, x):
        x = np.asarray(x, float)
        return self.base.value(x) - self.v0 - (x - self.p0) @ self.g0

    def gradient(self, x):
        return self.base.gradient(x) - self.g0

    def hessian(self, x):
        return self.base.hessian(x)

    def domain_margin(self, x):
        return self.base.domain_margin(x)

    def __getattr__(self, name):
        return getattr(self.base, name)
