"""Closed-form potentials used as oracles.

* edge and vertex models (``flat``, ``shear(a)``, ``half_flat``) and the
  exact product solution on ``[-1, 1]^2``;
* the zero scalar curvature family on the quadrant built from axially
  symmetric harmonic functions, with its Ricci-flat member;
* a one-dimensional family whose solutions degenerate as ``eps -> 0``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.integrate import quad

from .errors import NewtonDiverged, OriginSingular, OutsideDomain

# --------------------------------------------------------------------------
# model potentials


def _xlogx(t):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(t > 0, t * np.log(np.where(t > 0, t, 1.0)), 0.0)


def _log(t):
    with np.errstate(divide="ignore"):
        return np.log(t)


def _hess(h11, h12, h22):
    return np.stack([np.stack([h11, h12], -1), np.stack([h12, h22], -1)], -2)


def model_potentials(name, x, a=None):
    """``(u, grad u, Hess u)`` of a named model, vectorised over ``x``.

    ``flat``: ``x1 log x1 + x2 log x2`` on the closed quadrant.
    ``half_flat``: ``x1 log x1 + x2^2`` on the half-plane ``x1 >= 0``.
    ``shear``: ``x1 log x1 + (x2 - a x1)^2`` on the same half-plane.
    ``square_product``: ``sum_i (1+x_i) log(1+x_i) + (1-x_i) log(1-x_i)``.
    Values extend to the boundary (``0 log 0 = 0``); derivatives diverge there.
    """
    x = np.asarray(x, float)
    x1, x2 = x[..., 0], x[..., 1]
    z = np.zeros_like(x1)
    if name == "flat":
        if np.any(x < 0):
            raise OutsideDomain("flat model lives on the closed quadrant")
        u = _xlogx(x1) + _xlogx(x2)
        g = np.stack([_log(x1) + 1, _log(x2) + 1], -1)
        with np.errstate(divide="ignore"):
            H = _hess(1 / x1, z, 1 / x2)
    elif name in ("half_flat", "shear"):
        a = 0.0 if name == "half_flat" else float(a)
        if np.any(x1 < 0):
            raise OutsideDomain("edge model lives on the half-plane x1 >= 0")
        s = x2 - a * x1
        u = _xlogx(x1) + s**2
        g = np.stack([_log(x1) + 1 - 2 * a * s, 2 * s], -1)
        with np.errstate(divide="ignore"):
            H = _hess(1 / x1 + 2 * a * a + z, -2 * a + z, 2 + z)
    elif name == "square_product":
        if np.any(np.abs(x) > 1):
            raise OutsideDomain("square model lives on [-1, 1]^2")
        u = np.sum(_xlogx(1 + x) + _xlogx(1 - x), axis=-1)
        g = _log(1 + x) - _log(1 - x)
        with np.errstate(divide="ignore"):
            d = 2.0 / (1 - x * x)
        H = _hess(d[..., 0], z, d[..., 1])
    else:
        raise ValueError(f"unknown model {name!r}")
    return u, g, H


class ModelField:
    """Field-like wrapper (value/gradient/hessian/domain_margin) of a model.

    ``affine`` = (c0, c1, c2) adds ``c0 + c1 x1 + c2 x2``.
    """

    def __init__(self, name, a=None, affine=(0.0, 0.0, 0.0)):
        self.name, self.a = name, a
        self.affine = np.asarray(affine, float)

    def _eval(self, x):
        return model_potentials(self.name, x, self.a)

    def value(self, x):
        x = np.asarray(x, float)
        c = self.affine
        return self._eval(x)[0] + c[0] + x @ c[1:]

    def gradient(self, x):
        return self._eval(x)[1] + self.affine[1:]

    def hessian(self, x):
        return self._eval(x)[2]

    def domain_margin(self, x):
        x = np.asarray(x, float)
        if self.name == "flat":
            return np.minimum(x[..., 0], x[..., 1])
        if self.name == "square_product":
            return 1.0 - np.max(np.abs(x), axis=-1)
        return x[..., 0]


# --------------------------------------------------------------------------
# axially symmetric harmonic functions


def F_pm(H, r):
    """``F_pm = (+-H + sqrt(H^2 + r^2)) / 2`` without cancellation.

    Returns ``(F_plus, F_minus)``; uses ``F_+ F_- = r^2 / 4`` for the
    small branch.
    """
    H = np.asarray(H, float)
    r = np.asarray(r, float)
    if np.any(r < 0):
        raise OutsideDomain("r must be nonnegative")
    if np.any((H == 0) & (r == 0)):
        raise OriginSingular("F_pm is singular at H = r = 0")
    rho = np.hypot(H, r)
    big_p = H >= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        Fp = np.where(big_p, 0.5 * (H + rho), 0.25 * r * r / (0.5 * (rho - H)))
        Fm = np.where(big_p, 0.25 * r * r / (0.5 * (H + rho)), 0.5 * (rho - H))
    return Fp, Fm


@dataclass(frozen=True)
class AxiSymField:
    """A function ``xi(r, H)`` with an optional conjugate ``x(r, H)``."""

    xi: object
    x: object = None
    sign: float = 1.0  # conjugacy dx/dr = sign (r/2) dxi/dH, dx/dH = -sign (r/2) dxi/dr


def _fd_axisym(fn, r, H, h):
    f = lambda dr, dH: fn(r + dr * h, H + dH * h)
    c = f(0, 0)
    frr = (f(1, 0) - 2 * c + f(-1, 0)) / h**2
    fHH = (f(0, 1) - 2 * c + f(0, -1)) / h**2
    fr = (f(1, 0) - f(-1, 0)) / (2 * h)
    fH = (f(0, 1) - f(0, -1)) / (2 * h)
    return fr, fH, frr, fHH


def check_axisym_harmonic(field, r, H, h=1e-4):
    """Centred-difference residuals on the sample points ``(r, H)``, ``r > 0``.

    Returns max absolute residuals of the harmonic equation for ``xi``,
    of the conjugate equation for ``x`` and of the first-order system
    linking them (``None`` entries when ``x`` is absent).
    """
    r = np.asarray(r, float)
    H = np.asarray(H, float)
    if np.any(r - h <= 0):
        raise OutsideDomain("patch must stay off the axis r = 0")
    fr, fH, frr, fHH = _fd_axisym(field.xi, r, H, h)
    out = {"harmonic": float(np.max(np.abs(fHH + frr + fr / r)))}
    if field.x is not None:
        xr, xH, xrr, xHH = _fd_axisym(field.x, r, H, h)
        out["conjugate"] = float(np.max(np.abs(xHH + xrr - xr / r)))
        s = field.sign
        out["system"] = float(max(np.max(np.abs(xr - s * 0.5 * r * fH)),
                                  np.max(np.abs(xH + s * 0.5 * r * fr))))
    else:
        out["conjugate"] = out["system"] = None
    return out


# --------------------------------------------------------------------------
# zero scalar curvature family on the quadrant


@dataclass(frozen=True)
class JoyceParams:
    a1: float
    a2: float

    def __post_init__(self):
        if not (self.a1 > 0 and self.a2 > 0):
            raise ValueError("a1 and a2 must be positive")


def joyce_map(params, y1, y2):
    """``x1 = y1 + a1 y1 y2``, ``x2 = y2 + a2 y1 y2`` on the closed quadrant."""
    y1 = np.asarray(y1, float)
    y2 = np.asarray(y2, float)
    if np.any(y1 < 0) or np.any(y2 < 0):
        raise OutsideDomain("joyce_map needs y1, y2 >= 0")
    p = y1 * y2
    return y1 + params.a1 * p, y2 + params.a2 * p


def joyce_inverse(params, x1, x2, tol=1e-12, max_iter=100):
    """Invert :func:`joyce_map` by damped Newton started at ``y = x``."""
    x1 = np.asarray(x1, float)
    x2 = np.asarray(x2, float)
    if np.any(x1 < 0) or np.any(x2 < 0):
        raise OutsideDomain("joyce_inverse needs x1, x2 >= 0")
    a1, a2 = params.a1, params.a2
    y1, y2 = x1.copy(), x2.copy()
    scale = 1.0 + np.abs(x1) + np.abs(x2)
    polish = 0
    for _ in range(max_iter):
        r1 = y1 + a1 * y1 * y2 - x1
        r2 = y2 + a2 * y1 * y2 - x2
        err = np.maximum(np.abs(r1), np.abs(r2)) / scale
        if np.all(err <= tol):
            # one more full step takes the quadratic convergence to round-off,
            # which finite differences of the derived Hessian rely on
            if polish:
                return y1, y2
            polish = 1
        j11, j12 = 1 + a1 * y2, a1 * y1
        j21, j22 = a2 * y2, 1 + a2 * y1
        det = j11 * j22 - j12 * j21
        d1 = -(j22 * r1 - j12 * r2) / det
        d2 = -(-j21 * r1 + j11 * r2) / det
        # damping keeps the iterate in the closed quadrant
        t = np.ones_like(y1)
        for d, y in ((d1, y1), (d2, y2)):
            with np.errstate(divide="ignore", invalid="ignore"):
                lim = np.where(d < 0, -0.9 * y / d, np.inf)
            t = np.minimum(t, np.where(y == 0, 1.0, lim))
        y1 = np.maximum(y1 + t * d1, 0.0)
        y2 = np.maximum(y2 + t * d2, 0.0)
    raise NewtonDiverged(f"no convergence after {max_iter} iterations (max err {err.max():.2e})")


def joyce_sigma_tau(params, x1, x2):
    a1, a2 = params.a1, params.a2
    return a2 * np.asarray(x1) - a1 * np.asarray(x2), a2 * np.asarray(x1) + a1 * np.asarray(x2)


def joyce_inverse_closed(params, x1, x2):
    """Closed-form inverse in ``sigma = a2 x1 - a1 x2``, ``tau = a2 x1 + a1 x2``.

    ``2 a2 y1 = (sigma - 1) + sqrt(sigma^2 + 2 tau + 1)`` and
    ``2 a1 y2 = -(sigma + 1) + sqrt(sigma^2 + 2 tau + 1)``; the small root
    is rewritten to avoid cancellation.
    """
    s, t = joyce_sigma_tau(params, x1, x2)
    q = np.sqrt(s * s + 2 * t + 1)
    # (q + s - 1)(q - s + 1) = q^2 - (s - 1)^2 = 2 (s + t)
    with np.errstate(divide="ignore", invalid="ignore"):
        Y1 = np.where(s >= 1, 0.5 * (s - 1 + q), (s + t) / (q - s + 1))
        Y2 = np.where(s <= -1, 0.5 * (q - s - 1), (t - s) / (q + s + 1))
    return Y1 / params.a2, Y2 / params.a1


def joyce_inverse_printed(params, x1, x2):
    """The inverse as ``2 y1 = (s-1) + sqrt(s^2 + t/a2 + 1)``,
    ``2 y2 = (1-s) + sqrt(s^2 + t/a1 + 1)``; kept only to document that it
    does not invert :func:`joyce_map`."""
    s, t = joyce_sigma_tau(params, x1, x2)
    return (0.5 * ((s - 1) + np.sqrt(s * s + t / params.a2 + 1)),
            0.5 * ((1 - s) + np.sqrt(s * s + t / params.a1 + 1)))


def _joyce_y(params, x):
    x = np.asarray(x, float)
    if np.any(x <= 0):
        raise OutsideDomain("joyce potential needs the open quadrant")
    return joyce_inverse(params, x[..., 0], x[..., 1])


def joyce_xi(params, y1, y2):
    a1, a2 = params.a1, params.a2
    return (np.log(y1) + a2 * (y1 - y2) + 1.0, np.log(y2) + a1 * (y2 - y1) + 1.0)


def joyce_potential(params, x):
    """``u = x1 log y1 + x2 log y2 + (a2 y1^2 + a1 y2^2) / 2`` and its gradient."""
    x = np.asarray(x, float)
    y1, y2 = _joyce_y(params, x)
    u = (x[..., 0] * np.log(y1) + x[..., 1] * np.log(y2)
         + 0.5 * (params.a2 * y1**2 + params.a1 * y2**2))
    xi1, xi2 = joyce_xi(params, y1, y2)
    return u, np.stack([xi1, xi2], -1)


def joyce_hessian(params, x):
    """``u_ij = (d xi / d y)(d x / d y)^-1`` in closed form."""
    y1, y2 = _joyce_y(params, x)
    a1, a2 = params.a1, params.a2
    dxi = _hess(1 / y1 + a2, -a2 + 0 * y1, 1 / y2 + a1)
    dxi[..., 1, 0] = -a1
    dx = _hess(1 + a1 * y2, a1 * y1, 1 + a2 * y1)
    dx[..., 1, 0] = a2 * y2
    H = dxi @ np.linalg.inv(dx)
    return 0.5 * (H + np.swapaxes(H, -1, -2))


def joyce_r(params, x):
    """Cylindrical radius ``r = 2 sqrt(y1 y2)`` of the point ``x``."""
    y1, y2 = _joyce_y(params, x)
    return 2.0 * np.sqrt(y1 * y2)


def joyce_axisym_fields(params):
    """The harmonic pair ``xi_i(r, H)`` and conjugates ``x_i(r, H)``."""
    a1, a2 = params.a1, params.a2

    def xi1(r, H):
        return np.log(F_pm(H, r)[1]) - a2 * H + 1

    def xi2(r, H):
        return np.log(F_pm(H, r)[0]) + a1 * H + 1

    def x1(r, H):
        return F_pm(H, r)[1] + a1 * r * r / 4

    def x2(r, H):
        return F_pm(H, r)[0] + a2 * r * r / 4

    # the labels are interchanged with a sign: dx1/dr pairs with dxi2/dH
    return AxiSymField(xi2, x1, sign=1.0), AxiSymField(xi1, x2, sign=-1.0)


class JoyceField:
    """Field-like wrapper of the quadrant potential."""

    def __init__(self, params):
        self.params = params

    def value(self, x):
        return joyce_potential(self.params, x)[0]

    def gradient(self, x):
        return joyce_potential(self.params, x)[1]

    def hessian(self, x):
        return joyce_hessian(self.params, x)

    def domain_margin(self, x):
        x = np.asarray(x, float)
        return np.minimum(x[..., 0], x[..., 1])


def taub_nut_identity(params, x):
    """``xi1 + xi2 - (2 log(r/2) + 2)``; zero when ``a1 == a2``."""
    y1, y2 = _joyce_y(params, x)
    xi1, xi2 = joyce_xi(params, y1, y2)
    r = 2.0 * np.sqrt(y1 * y2)
    return xi1 + xi2 - (2.0 * np.log(r / 2.0) + 2.0)


def taub_nut_identity_printed(params, x):
    """``xi1 + xi2 - (log r + 2)``, the relation as usually quoted."""
    y1, y2 = _joyce_y(params, x)
    xi1, xi2 = joyce_xi(params, y1, y2)
    return xi1 + xi2 - (np.log(2.0 * np.sqrt(y1 * y2)) + 2.0)


# --------------------------------------------------------------------------
# one-dimensional degenerating family


def _blend_coefficients(eps):
    """Quintic on [1/2, 3/4] matching x^2 + eps^2 and 1 - x to second order."""
    a, b = 0.5, 0.75
    left = (a * a + eps * eps, 2 * a, 2.0)
    right = (1 - b, -1.0, 0.0)
    rows, rhs = [], []
    for x0, vals in ((a, left), (b, right)):
        for k, v in enumerate(vals):
            row = [0.0] * 6
            for p in range(k, 6):
                c = np.prod(np.arange(p - k + 1, p + 1)) if k else 1.0
                row[p] = c * x0 ** (p - k)
            rows.append(row)
            rhs.append(v)
    return np.linalg.solve(np.array(rows), np.array(rhs))


NORMALIZATIONS = {"at_0": 0.0, "at_plus_half": 0.5, "at_minus_half": -0.5}


class OneDFamily:
    """``U'' = 1 / f_eps`` on (-1, 1), ``f_eps = x^2 + eps^2`` on ``|x| <= 1/2``.

    ``f_eps`` is even, equals ``1 - |x|`` on ``3/4 <= |x| <= 1`` and is a
    C^2 quintic blend in between. ``(1 / U'')'' = -f_eps''``, so ``U``
    solves the one-dimensional equation with ``a_eps = f_eps''`` and has
    ``(1 - |x|) log(1 - |x|)`` behaviour at the ends.
    """

    BLEND = (0.5, 0.75)

    def __init__(self, eps, normalization="at_0"):
        if not eps > 0:
            raise ValueError("eps must be positive")
        if normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {normalization!r}")
        self.eps = float(eps)
        self.normalization = normalization
        self.x0 = NORMALIZATIONS[normalization]
        self._c = _blend_coefficients(self.eps)

    def f(self, x):
        x = np.abs(np.asarray(x, float))
        a, b = self.BLEND
        blend = np.polynomial.polynomial.polyval(x, self._c)
        return np.where(x <= a, x * x + self.eps**2, np.where(x < b, blend, 1 - x))

    def f_second(self, x):
        """``a_eps = f_eps''``."""
        x = np.abs(np.asarray(x, float))
        a, b = self.BLEND
        c2 = np.polynomial.polynomial.polyder(self._c, 2)
        return np.where(x <= a, 2.0, np.where(x < b, np.polynomial.polynomial.polyval(x, c2), 0.0))

    @cached_property
    def _blend_integral(self):
        a, b = self.BLEND
        val, err = quad(lambda t: 1.0 / self.f(t), a, b, epsabs=0, epsrel=1e-13, limit=200)
        return val

    def _G_pos(self, x):
        """Odd antiderivative of 1/f_eps, evaluated for x >= 0."""
        e = self.eps
        a, b = self.BLEND
        if x <= a:
            return np.arctan(x / e) / e
        Ga = np.arctan(a / e) / e
        if x < b:
            return Ga + quad(lambda t: 1.0 / self.f(t), a, x, epsabs=0, epsrel=1e-13,
                             limit=200)[0]
        if x >= 1:
            return np.inf
        return Ga + self._blend_integral - np.log((1 - x) / (1 - b))

    def G(self, x):
        x = np.asarray(x, float)
        out = np.vectorize(lambda t: np.sign(t) * self._G_pos(abs(t)), otypes=[float])(x)
        return out

    def dU(self, x):
        """``U'`` with ``U'(x0) = 0`` at the normalisation point."""
        return self.G(x) - self._G_pos(abs(self.x0)) * np.sign(self.x0)

    def d2U(self, x):
        return 1.0 / self.f(x)

    def U(self, x):
        """``U`` with ``U(x0) = U'(x0) = 0`` by adaptive quadrature of ``U'``."""
        x = np.asarray(x, float)

        def one(t):
            if abs(t) >= 1:
                raise OutsideDomain("U is evaluated on the open interval (-1, 1)")
            return quad(lambda s: float(self.dU(s)), self.x0, t, epsabs=1e-15, epsrel=1e-13,
                        limit=400, points=[p for p in (-0.75, -0.5, 0.0, 0.5, 0.75)
                                           if min(self.x0, t) < p < max(self.x0, t)] or None)[0]

        return np.vectorize(one, otypes=[float])(x)

    def n_eps(self):
        """Slope ``n`` with ``U_- - U_+ = n x + const`` (normalised at -1/2, +1/2)."""
        return 2.0 * self._G_pos(0.5)

    def n_eps_closed_form(self):
        """Core integral ``2 eps^-1 arctan(1 / (2 eps))``; the tail adds nothing
        because both normalisation points lie inside the core."""
        return 2.0 / self.eps * np.arctan(0.5 / self.eps)


def one_d_family(eps, normalization="at_0"):
    """The family member ``U`` and its slope gap ``n_eps``."""
    fam = OneDFamily(eps, normalization)
    return fam, fam.n_eps()
