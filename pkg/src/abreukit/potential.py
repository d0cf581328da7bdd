"""Symplectic potentials ``u = u0 + f`` on a uniform grid.

``u0`` is the canonical potential with the prescribed logarithmic boundary
behaviour and is differentiated in closed form. Only the smooth correction
``f`` lives on grid nodes and is differentiated by centred differences.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RectBivariateSpline
from scipy.spatial import cKDTree

from ._quadrature import gauss_legendre01, tanh_sinh01, triangle_rule_singular
from .errors import NotPositiveDefinite, OutsidePolygon
from .geometry import Polygon, clip_polygon, AffineFunction

OUTSIDE_RTOL = 1e-12


# --------------------------------------------------------------------------
# canonical potential


def _xlogx(t):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(t > 0, t * np.log(np.where(t > 0, t, 1.0)), 0.0)


def _check_inside(polytope, ell):
    tol = OUTSIDE_RTOL * polytope.polygon.diameter * polytope.normal_norms
    if np.any(ell < -tol):
        raise OutsidePolygon("point outside the polygon")
    return np.maximum(ell, 0.0)


def canonical_potential(polytope, x):
    """Value, gradient and Hessian of ``u0 = sum_k w_k^-1 l_k log l_k``.

    Vectorised over the leading axes of ``x``. On an edge the value is
    finite (``0 log 0 = 0``) while gradient and Hessian diverge.
    """
    ell = _check_inside(polytope, polytope.ell(x))
    winv = 1.0 / polytope.edge_weights
    n = polytope.normals
    val = _xlogx(ell) @ winv
    with np.errstate(divide="ignore", invalid="ignore"):
        grad = ((np.log(ell) + 1.0) * winv) @ n
        hess = np.einsum("...k,ki,kj->...ij", winv / ell, n, n)
    return val, grad, hess


def _pair_coefficients(polytope):
    n = polytope.normals
    winv = 1.0 / polytope.edge_weights
    cr = n[:, None, 0] * n[None, :, 1] - n[:, None, 1] * n[None, :, 0]
    C = np.triu(winv[:, None] * winv[None, :] * cr**2, 1)
    return C


def canonical_log_det(polytope, ell):
    """log det Hess u0 from edge values, free of cancellation near edges.

    det = sum_{j<k} (w_j w_k)^-1 (n_j x n_k)^2 / (l_j l_k).
    """
    C = _pair_coefficients(polytope)
    with np.errstate(divide="ignore"):
        inv = 1.0 / ell
    det = np.einsum("...j,jk,...k->...", inv, C, inv)
    return np.log(det)


def canonical_scalar_curvature(polytope, x):
    """``S(u0) = -sum_ij d_i d_j u0^{ij}`` in closed form at interior points."""
    ell = polytope.ell(x)
    if np.any(ell <= 0):
        raise OutsidePolygon("scalar curvature of u0 needs interior points")
    winv = 1.0 / polytope.edge_weights
    n = polytope.normals
    nn = np.einsum("ki,kj->kij", n, n)
    H = np.einsum("...k,kij->...ij", winv / ell, nn)
    dH = -np.einsum("...k,ka,kij->...aij", winv / ell**2, n, nn)
    ddH = 2.0 * np.einsum("...k,ka,kb,kij->...abij", winv / ell**3, n, n, nn)
    Hi = np.linalg.inv(H)
    # d_a d_b H^-1 = H^-1 (dH_a H^-1 dH_b + dH_b H^-1 dH_a - ddH_ab) H^-1
    X = np.einsum("...aij,...jk,...bkl->...abil", dH, Hi, dH)
    X = X + np.swapaxes(X, -3, -4) - ddH
    dd = np.einsum("...ij,...abjk,...kl->...abil", Hi, X, Hi)
    return -np.einsum("...abab->...", dd)


def _vertex_ell(polytope):
    """Edge functions at the vertices, exact zeros on incident edges."""
    V = polytope.polygon.vertices
    E = polytope.ell(V)
    K = len(V)
    for k in range(K):
        E[k, k] = 0.0
        E[k, (k - 1) % K] = 0.0
    return E


def canonical_integrals(polytope, level=6):
    """High-accuracy ``int_P log det Hess u0`` and ``L(u0)``.

    Fan triangulation from the centroid with a tanh-sinh product rule
    clustered on each edge; affine quantities are interpolated through
    barycentric coordinates so distances to the edges keep full precision.
    """
    poly = polytope.polygon
    V = poly.vertices
    K = len(V)
    g = poly.centroid
    Eg = polytope.ell(g)
    Ev = _vertex_ell(polytope)
    winv = 1.0 / polytope.edge_weights
    logdet = 0.0
    area_u = 0.0
    for k in range(K):
        _, wts, bary = triangle_rule_singular(g, V[k], V[(k + 1) % K], level)
        ell = bary @ np.stack([Eg, Ev[k], Ev[(k + 1) % K]])
        logdet += wts @ canonical_log_det(polytope, ell)
        area_u += wts @ (_xlogx(ell) @ winv)
    x, xc, w = tanh_sinh01(level)
    bnd = 0.0
    for k in range(K):
        ell = xc[:, None] * Ev[k] + x[:, None] * Ev[(k + 1) % K]
        ell[:, k] = 0.0
        bnd += polytope.measure_density[k] * poly.edge_lengths[k] * (w @ (_xlogx(ell) @ winv))
    return logdet, bnd - polytope.A * area_u


# --------------------------------------------------------------------------
# grid


def _sparse(rows, cols, vals, shape):
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape
    )


class Grid:
    """Cell-centred grid over the bounding box of P with spacing ``1/N``.

    Node classes: *inside* (in the open polygon), *stencil* (inside with all
    eight neighbours inside), *unknown* (stencil nodes and their axis
    neighbours; these carry the degrees of freedom of f), *ghost* (diagonal
    neighbours of stencil nodes that are not unknowns) and *collar* (inside, within
    ``collar * h`` of the boundary). ``regular`` nodes have a full ring of
    stencil neighbours, which is where the Abreu operator is defined.
    """

    def __init__(self, polytope, N, collar=2.0, pad=2):
        if N < 1:
            raise ValueError("N must be positive")
        self.polytope = polytope
        self.N = int(N)
        self.h = h = 1.0 / N
        self.collar_cells = float(collar)
        poly = polytope.polygon
        lo, hi = poly.vertices.min(0), poly.vertices.max(0)
        counts = np.ceil((hi - lo) / h - 1e-9).astype(int) + 2 * pad
        self.shape = nx, ny = int(counts[0]), int(counts[1])
        self.xs = lo[0] + (np.arange(nx) - pad + 0.5) * h
        self.ys = lo[1] + (np.arange(ny) - pad + 0.5) * h
        X1, X2 = np.meshgrid(self.xs, self.ys, indexing="ij")
        self.points = np.stack([X1, X2], axis=-1)
        self.margin = poly.margin(self.points)
        ell = polytope.ell(self.points)
        self.inside = np.all(ell > 1e-12 * poly.diameter * polytope.normal_norms, axis=-1)
        self.inside &= self.margin > 0
        ins = np.pad(self.inside, 1)
        nb = np.ones_like(self.inside)
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                nb &= ins[1 + di : 1 + di + nx, 1 + dj : 1 + dj + ny]
        self.stencil = nb
        st = np.pad(self.stencil, 1)
        near8 = np.zeros_like(self.inside)
        near4 = self.stencil.copy()
        reg = np.ones_like(self.inside)
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                sl = st[1 + di : 1 + di + nx, 1 + dj : 1 + dj + ny]
                near8 |= sl
                reg &= sl
                if di == 0 or dj == 0:
                    near4 |= sl
        # nodes reached only diagonally by a stencil would be controlled by
        # the cross difference alone; they become ghosts, f(g) = f(a) + f(b) - f(s)
        self.unknown = near4
        self.ghost = near8 & ~near4
        self.regular = reg
        self.collar = self.inside & (self.margin <= self.collar_cells * h)
        if self.stencil.sum() < 9:
            raise ValueError(f"grid N={N} too coarse for this polygon")

        self.unk_flat = np.flatnonzero(self.unknown.ravel())
        self.st_flat = np.flatnonzero(self.stencil.ravel())
        self.ghost_flat = np.flatnonzero(self.ghost.ravel())
        self.n_unknown = len(self.unk_flat)
        self.n_stencil = len(self.st_flat)
        self.unk_id = np.full(nx * ny, -1)
        self.unk_id[self.unk_flat] = np.arange(self.n_unknown)
        self.ext_id = self.unk_id.copy()
        self.ext_id[self.ghost_flat] = self.n_unknown + np.arange(len(self.ghost_flat))
        self.unk_points = self.points.reshape(-1, 2)[self.unk_flat]
        self.st_points = self.points.reshape(-1, 2)[self.st_flat]
        self.st_in_unk = self.unk_id[self.st_flat]
        self._build_ghost_map()
        self._build_stencils()
        self._build_gradients()
        self._build_functional()

    # -- difference operators ------------------------------------------------

    def _shift_ids(self, flat, di, dj):
        ny = self.shape[1]
        return self.ext_id[flat + di * ny + dj]

    def _build_ghost_map(self):
        """Sparse T with f_ext = T f: identity on unknowns, ghosts by bilinear completion."""
        nx, ny = self.shape
        n, g = self.n_unknown, len(self.ghost_flat)
        rows, cols, vals = [np.arange(n)], [np.arange(n)], [np.ones(n)]
        gi, gj = np.divmod(self.ghost_flat, ny)
        done = np.zeros(g, bool)
        for si in (-1, 1):
            for sj in (-1, 1):
                s_i, s_j = gi + si, gj + sj
                ok = ~done & (s_i >= 0) & (s_i < nx) & (s_j >= 0) & (s_j < ny)
                ok[ok] = self.stencil[s_i[ok], s_j[ok]]
                k = np.flatnonzero(ok)
                for (a, b), coef in (((s_i, s_j), -1.0), ((gi, s_j), 1.0), ((s_i, gj), 1.0)):
                    rows.append(n + k)
                    cols.append(self.unk_id[a[k] * ny + b[k]])
                    vals.append(np.full(len(k), coef))
                done |= ok
        self.T = _sparse(rows, cols, vals, (n + g, n))

    def _build_stencils(self):
        h2 = self.h**2
        m = self.n_stencil
        r = np.arange(m)
        s = self.st_flat
        sh = (m, self.n_unknown + len(self.ghost_flat))
        idc = lambda di, dj: self._shift_ids(s, di, dj)
        self.D11 = _sparse([r] * 3, [idc(-1, 0), idc(0, 0), idc(1, 0)],
                           [np.full(m, 1 / h2), np.full(m, -2 / h2), np.full(m, 1 / h2)], sh)
        self.D22 = _sparse([r] * 3, [idc(0, -1), idc(0, 0), idc(0, 1)],
                           [np.full(m, 1 / h2), np.full(m, -2 / h2), np.full(m, 1 / h2)], sh)
        q = 1 / (4 * h2)
        self.D12 = _sparse([r] * 4, [idc(1, 1), idc(-1, -1), idc(1, -1), idc(-1, 1)],
                           [np.full(m, q), np.full(m, q), np.full(m, -q), np.full(m, -q)], sh)
        self.G1s = _sparse([r] * 2, [idc(1, 0), idc(-1, 0)],
                           [np.full(m, 0.5 / self.h), np.full(m, -0.5 / self.h)], sh)
        self.G2s = _sparse([r] * 2, [idc(0, 1), idc(0, -1)],
                           [np.full(m, 0.5 / self.h), np.full(m, -0.5 / self.h)], sh)
        self._D12_ext = self.D12
        for name in ("D11", "D22", "D12", "G1s", "G2s"):
            setattr(self, name, (getattr(self, name) @ self.T).tocsr())

    def _build_gradients(self):
        """First differences at every unknown node.

        Central differences where both axis neighbours are unknowns, else a
        least-squares affine fit over the unknown and ghost nodes of the 3x3
        block (exact on affine functions either way).
        """
        n = self.n_unknown
        nx, ny = self.shape
        u = self.unk_flat
        ui, uj = np.divmod(u, ny)
        T = self.T.tocsr()
        h = self.h

        def ext(i, j):
            ok = (i >= 0) & (i < nx) & (j >= 0) & (j < ny)
            return np.where(ok, self.ext_id[np.clip(i, 0, nx - 1) * ny + np.clip(j, 0, ny - 1)], -1)

        ids = np.arange(n)
        central = np.ones(n, bool)
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            central &= self.unk_id[np.clip((ui + di), 0, nx - 1) * ny + np.clip(uj + dj, 0, ny - 1)] >= 0
            central &= (ui + di >= 0) & (ui + di < nx) & (uj + dj >= 0) & (uj + dj < ny)
        k = ids[central]
        e = lambda di, dj: self.unk_id[(ui[k] + di) * ny + uj[k] + dj]
        G1 = sp.csr_matrix((np.r_[np.full(len(k), 0.5 / h), np.full(len(k), -0.5 / h)],
                            (np.r_[k, k], np.r_[e(1, 0), e(-1, 0)])), shape=(n, n))
        G2 = sp.csr_matrix((np.r_[np.full(len(k), 0.5 / h), np.full(len(k), -0.5 / h)],
                            (np.r_[k, k], np.r_[e(0, 1), e(0, -1)])), shape=(n, n))
        offs = np.array([(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1)])
        fallback = ids[~central]
        blocks = []
        for r in fallback:
            nb = ext(ui[r] + offs[:, 0], uj[r] + offs[:, 1])
            keep = nb >= 0
            X = np.column_stack([np.ones(keep.sum()), offs[keep] * h])
            # gradient rows of the affine least-squares fit, mapped to unknowns
            blocks.append(sp.csr_matrix(np.linalg.pinv(X)[1:]) @ T[nb[keep]])
        if blocks:
            W = sp.vstack(blocks).tocsr()
            pick = lambda rows: sp.csr_matrix(
                (np.ones(len(fallback)), (fallback, rows)), shape=(n, W.shape[0]))
            G1 = G1 + pick(2 * np.arange(len(fallback))) @ W
            G2 = G2 + pick(2 * np.arange(len(fallback)) + 1) @ W
        self.G1, self.G2 = G1.tocsr(), G2.tocsr()

    def linear_extrapolation(self, points, base):
        """Sparse rows giving ``f(p) ~ f(b) + grad f(b) . (p - b)``."""
        d = points - self.unk_points[base]
        m = len(points)
        E = sp.csr_matrix((np.ones(m), (np.arange(m), base)), shape=(m, self.n_unknown))
        return E + sp.diags(d[:, 0]) @ self.G1[base] + sp.diags(d[:, 1]) @ self.G2[base]

    def quadratic_extrapolation(self, points, base_st):
        """Second-order Taylor rows about stencil nodes (centred differences)."""
        d = points - self.st_points[base_st]
        m = len(points)
        ids = self.st_in_unk[base_st]
        E = sp.csr_matrix((np.ones(m), (np.arange(m), ids)), shape=(m, self.n_unknown))
        E = E + sp.diags(d[:, 0]) @ self.G1s[base_st] + sp.diags(d[:, 1]) @ self.G2s[base_st]
        E = E + sp.diags(0.5 * d[:, 0] ** 2) @ self.D11[base_st]
        E = E + sp.diags(0.5 * d[:, 1] ** 2) @ self.D22[base_st]
        E = E + sp.diags(d[:, 0] * d[:, 1]) @ self.D12[base_st]
        return E.tocsr()

    # -- the discrete functional ---------------------------------------------

    def _build_functional(self):
        P = self.polytope
        poly = P.polygon
        h = self.h
        tree = cKDTree(self.unk_points)

        # boundary: composite Gauss on pieces no longer than h/2
        gx, gw = gauss_legendre01(3)
        bpts, bw = [], []
        for k, (a, b) in enumerate(poly.edges):
            L = poly.edge_lengths[k]
            m = int(np.ceil(L / (0.5 * h)))
            t = ((np.arange(m)[:, None] + gx[None, :]) / m).ravel()
            bpts.append(a + t[:, None] * (b - a))
            bw.append(np.tile(gw, m) * (L / m) * P.measure_density[k])
        bpts = np.concatenate(bpts)
        bw = np.concatenate(bw)
        Eb = self.linear_extrapolation(bpts, tree.query(bpts)[1])

        # area: each cell clipped to P, mass at the piece centroid
        flat_pts = self.points.reshape(-1, 2)
        flat_margin = self.margin.ravel()
        r = h / np.sqrt(2.0)
        full = np.flatnonzero(flat_margin >= r)
        partial = np.flatnonzero((flat_margin > -r) & (flat_margin < r))
        lams = [AffineFunction(*(n / np.linalg.norm(n)), -o / np.linalg.norm(n))
                for n, o in zip(P.normals, P.offsets)]
        half = 0.5 * h * np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]])
        cells, cp, cw = [], [], []
        for i in partial:
            piece = clip_polygon(Polygon(flat_pts[i] + half), lams)
            if piece is not None and piece.area > 0:
                cells.append(i)
                cp.append(piece.centroid)
                cw.append(piece.area)
        cells = np.array(cells, dtype=int)
        apts = np.concatenate([flat_pts[full], np.reshape(cp, (-1, 2))])
        aw = np.concatenate([np.full(len(full), h * h), np.array(cw)])
        base = tree.query(apts)[1]
        own = self.unk_id[full]
        base[: len(full)] = np.where(own >= 0, own, base[: len(full)])
        Ea = self.linear_extrapolation(apts, base)
        self.area_quadrature_total = float(aw.sum())

        # L(f) through its boundary quadrature; kept as a cross-check, the
        # solver uses the equivalent interior form assembled below
        self.c_boundary = Eb.T @ bw - P.A * (Ea.T @ aw)
        self.affine_basis = np.column_stack([np.ones(self.n_unknown), self.unk_points])
        self._Ea, self._aw, self._apts = Ea, aw, apts

        # log-det quadrature: every inside node, weight = its cell inside P plus
        # cut cells whose centre lies outside; Hessians of f at nodes without a
        # full stencil are taken from the nearest stencil node
        q_flat = np.flatnonzero(self.inside.ravel())
        q_id = np.full(flat_pts.shape[0], -1)
        q_id[q_flat] = np.arange(len(q_flat))
        wq = np.zeros(len(q_flat))
        wq[q_id[full]] = h * h
        inner = q_id[cells] >= 0
        np.add.at(wq, q_id[cells[inner]], np.array(cw)[inner])
        if (~inner).any():
            near = cKDTree(flat_pts[q_flat]).query(flat_pts[cells[~inner]])[1]
            np.add.at(wq, near, np.array(cw)[~inner])
        st_id = np.full(flat_pts.shape[0], -1)
        st_id[self.st_flat] = np.arange(self.n_stencil)
        anchor = st_id[q_flat]
        loose = anchor < 0
        anchor[loose] = cKDTree(self.st_points).query(flat_pts[q_flat[loose]])[1]
        self.q_flat, self.q_weights, self.q_anchor = q_flat, wq, anchor
        self.q_points = flat_pts[q_flat]
        # Near the boundary only the tangential second derivative matters at
        # leading order (the inverse Hessian degenerates in the normal
        # direction), so nodes without a full stencil keep tangential
        # curvature alone: from their own three-point stencil along the edge
        # when the lattice allows it, otherwise from the nearest stencil node,
        # and not at all close to a vertex where the inverse Hessian is O(h).
        # A full anchored Hessian would feed a one-cell-shifted normal stencil
        # into the equations and leave an O(h) boundary layer.
        lz = np.flatnonzero(loose)
        dist = np.sort(poly.edge_distances(self.q_points[lz]), axis=1)
        nearest_edge = np.argmin(poly.edge_distances(self.q_points[lz]), axis=1)
        tang = poly.edge_vectors[nearest_edge] / poly.edge_lengths[nearest_edge][:, None]
        rows = [M[anchor].tolil() for M in (self.D11, self.D22, self.D12)]
        ny = self.shape[1]
        n_ext = self.T.shape[0]
        self.q_mode = np.zeros(len(q_flat), dtype="<U8")
        self.q_mode[~loose] = "full"
        for r, t, d in zip(lz, tang, dist):
            step = None
            for cand in ((1, 0), (0, 1), (1, 1), (1, -1)):
                v = np.array(cand, float) / np.hypot(*cand)
                if abs(abs(v @ t) - 1) < 1e-9:
                    step = cand
            tau = None
            if step is not None:
                i, j = divmod(int(q_flat[r]), ny)
                ids = []
                for sgn in (-1, 0, 1):
                    a, b = i + sgn * step[0], j + sgn * step[1]
                    ok = 0 <= a < self.shape[0] and 0 <= b < ny
                    ids.append(self.ext_id[a * ny + b] if ok else -1)
                if min(ids) >= 0:
                    hh = (step[0] ** 2 + step[1] ** 2) * h * h
                    row = sp.csr_matrix(([1 / hh, -2 / hh, 1 / hh], ([0, 0, 0], ids)),
                                        shape=(1, n_ext))
                    tau = row @ self.T
                    self.q_mode[r] = "own"
            if tau is None and d[1] <= 2 * h:
                self.q_mode[r] = "frozen"
                for M in rows:
                    M[r] = sp.csr_matrix((1, self.n_unknown))
                continue
            if tau is None:
                a = anchor[r]
                tau = (t[0] ** 2 * self.D11[a] + t[1] ** 2 * self.D22[a]
                       + 2 * t[0] * t[1] * self.D12[a])
                self.q_mode[r] = "anchored"
            for M, coef in zip(rows, (t[0] ** 2, t[1] ** 2, t[0] * t[1])):
                M[r] = coef * tau
        self.Q11, self.Q22, self.Q12 = (M.tocsr() for M in rows)

        # L(f) = int u0^{ij} f_ij + int (S(u0) - A) f, integrating the boundary
        # term by parts against u0. Using the log-det stencils for the first
        # part makes u0 an exact discrete critical point whenever S(u0) = A
        # and removes the boundary quadrature from the discrete equations.
        _, _, H0 = canonical_potential(P, self.q_points)
        inv0 = np.linalg.inv(H0)
        S0 = canonical_scalar_curvature(P, apts)
        c = (self.Q11.T @ (wq * inv0[:, 0, 0]) + self.Q22.T @ (wq * inv0[:, 1, 1])
             + 2.0 * (self.Q12.T @ (wq * inv0[:, 0, 1])) + Ea.T @ (aw * (S0 - P.A)))
        # for compatible data c annihilates affine functions up to O(h^2)
        self.c_affine_slack = float(np.max(np.abs(self.affine_basis.T @ c)))
        self.c = self._project(c)

        # nodes whose discrete equation is a plain Abreu stencil
        ghost_rows = np.asarray(np.abs(self._D12_ext[:, self.n_unknown:]).sum(axis=1)).ravel() > 0
        irregular = loose | (np.abs(wq - h * h) > 1e-12 * h * h)
        irregular[~loose] |= ghost_rows[anchor[~loose]]
        touched = set()
        for M in (self.Q11, self.Q22, self.Q12):
            touched.update(M[np.flatnonzero(irregular)].indices.tolist())
        odd = np.ones(len(aw), bool)
        odd[: len(full)] = own < 0
        touched.update(Ea[np.flatnonzero(odd)].indices.tolist())
        dirty = np.zeros(flat_pts.shape[0], bool)
        dirty[self.unk_flat[np.fromiter(touched, int)]] = True
        self.irregular_equation = dirty.reshape(self.shape)

    def _project(self, v):
        """Remove the component of ``v`` that pairs with affine functions."""
        phi = self.affine_basis
        return v - phi @ np.linalg.solve(phi.T @ phi, phi.T @ v)

    def remove_affine(self, f):
        """Subtract the least-squares affine fit from node values."""
        phi = self.affine_basis
        return f - phi @ np.linalg.lstsq(phi, f, rcond=None)[0]

    @cached_property
    def canonical_quad(self):
        """(Hess u0, log det Hess u0) at the log-det quadrature nodes."""
        _, _, H = canonical_potential(self.polytope, self.q_points)
        ld = canonical_log_det(self.polytope, self.polytope.ell(self.q_points))
        return H, ld

    @cached_property
    def canonical_stencil(self):
        """(grad u0, Hess u0, log det Hess u0) at stencil nodes."""
        _, g, H = canonical_potential(self.polytope, self.st_points)
        ld = canonical_log_det(self.polytope, self.polytope.ell(self.st_points))
        return g, H, ld

    @cached_property
    def canonical_M(self):
        logdet, Lu0 = canonical_integrals(self.polytope)
        return -logdet + Lu0, Lu0

    @cached_property
    def extension(self):
        """Sparse map from unknowns to every grid node (Taylor outside U)."""
        nxy = self.shape[0] * self.shape[1]
        other = np.flatnonzero(~self.unknown.ravel())
        tree = cKDTree(self.st_points)
        base = tree.query(self.points.reshape(-1, 2)[other])[1]
        Q = self.quadratic_extrapolation(self.points.reshape(-1, 2)[other], base)
        I = sp.csr_matrix(
            (np.ones(self.n_unknown), (self.unk_flat, np.arange(self.n_unknown))),
            shape=(nxy, self.n_unknown),
        )
        R = sp.csr_matrix((np.ones(len(other)), (other, np.arange(len(other)))),
                          shape=(nxy, len(other)))
        return (I + R @ Q).tocsr()

    def residual_mask(self):
        """Nodes where the Abreu residual is reported.

        Regular nodes outside the collar whose discrete equation is the plain
        Abreu stencil (untouched by boundary quadrature or anchored Hessians).
        """
        return self.regular & ~self.collar & ~self.irregular_equation

    def nearest_unknown(self, points):
        return cKDTree(self.unk_points).query(points)[1]


# --------------------------------------------------------------------------
# fields


@dataclass
class HessianData:
    """Derivatives of u at stencil nodes."""

    points: np.ndarray
    u_ij: np.ndarray  # (m, 2, 2)
    u_inv: np.ndarray  # (m, 2, 2)
    J: np.ndarray
    xi: np.ndarray  # (m, 2)


def _inv2(H):
    a, b, c = H[..., 0, 0], H[..., 0, 1], H[..., 1, 1]
    det = a * c - b * b
    inv = np.empty_like(H)
    inv[..., 0, 0] = c / det
    inv[..., 1, 1] = a / det
    inv[..., 0, 1] = inv[..., 1, 0] = -b / det
    return inv, det


def _is_pd(H):
    a, b, c = H[..., 0, 0], H[..., 0, 1], H[..., 1, 1]
    return (a > 0) & (a * c - b * b > 0)


class PotentialField:
    """``u = u0 + f`` with f given on the unknown nodes of a :class:`Grid`.

    Off-node values use bicubic interpolation of f (extended to the whole
    grid box by Taylor extrapolation) plus the closed-form u0.
    """

    def __init__(self, grid, f=None):
        self.grid = grid
        f = np.zeros(grid.n_unknown) if f is None else np.array(f, float)
        if f.shape != (grid.n_unknown,):
            raise ValueError("f must have one value per unknown node")
        if not np.all(np.isfinite(f)):
            raise ValueError("f must be finite")
        f.setflags(write=False)
        self.f = f

    @property
    def polytope(self):
        return self.grid.polytope

    @property
    def A(self):
        return self.grid.polytope.A

    def with_f(self, f):
        return PotentialField(self.grid, f)

    @cached_property
    def f_full(self):
        return (self.grid.extension @ self.f).reshape(self.grid.shape)

    @cached_property
    def _spline(self):
        return RectBivariateSpline(self.grid.xs, self.grid.ys, self.f_full, kx=3, ky=3, s=0)

    def _f_derivs(self, x, order):
        x = np.asarray(x, float)
        s = self._spline
        a, b = x[..., 0].ravel(), x[..., 1].ravel()
        shp = x.shape[:-1]
        if order == 0:
            return s.ev(a, b).reshape(shp)
        if order == 1:
            return np.stack([s.ev(a, b, dx=1), s.ev(a, b, dy=1)], -1).reshape(shp + (2,))
        h11, h12, h22 = s.ev(a, b, dx=2), s.ev(a, b, dx=1, dy=1), s.ev(a, b, dy=2)
        return np.stack([h11, h12, h12, h22], -1).reshape(shp + (2, 2))

    def domain_margin(self, x):
        return self.polytope.polygon.margin(x)

    def value(self, x):
        return canonical_potential(self.polytope, x)[0] + self._f_derivs(x, 0)

    def gradient(self, x):
        return canonical_potential(self.polytope, x)[1] + self._f_derivs(x, 1)

    def hessian(self, x):
        return canonical_potential(self.polytope, x)[2] + self._f_derivs(x, 2)

    # -- nodal calculus ------------------------------------------------------

    def stencil_hessians(self):
        g = self.grid
        H = g.canonical_stencil[1].copy()
        d12 = g.D12 @ self.f
        H[:, 0, 0] += g.D11 @ self.f
        H[:, 1, 1] += g.D22 @ self.f
        H[:, 0, 1] += d12
        H[:, 1, 0] += d12
        return H

    def quad_hessians(self):
        """Hessians entering the log-det quadrature (anchored near the boundary)."""
        g = self.grid
        H = g.canonical_quad[0].copy()
        d12 = g.Q12 @ self.f
        H[:, 0, 0] += g.Q11 @ self.f
        H[:, 1, 1] += g.Q22 @ self.f
        H[:, 0, 1] += d12
        H[:, 1, 0] += d12
        return H

    def quadratic_form(self, x, v):
        """``v^T Hess u(x) v``, finite on an edge for ``v`` tangent to it."""
        P = self.polytope
        x = np.asarray(x, float)
        ell = _check_inside(P, P.ell(x))
        nv = np.asarray(v, float) @ P.normals.T
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(nv == 0, 0.0, nv**2 / (P.edge_weights * ell))
        Hf = self._f_derivs(x, 2)
        return terms.sum(axis=-1) + np.einsum("...i,...ij,...j->...", v, Hf, v)

    def is_feasible(self):
        return bool(np.all(_is_pd(self.quad_hessians())))

    @cached_property
    def hessian_data(self):
        return eval_derivatives(self)

    def _on_grid(self, values, fill=np.nan):
        g = self.grid
        out = np.full((g.shape[0] * g.shape[1],) + values.shape[1:], fill)
        out[g.st_flat] = values
        return out.reshape(g.shape + values.shape[1:])


def eval_derivatives(field):
    """:class:`HessianData` at every stencil node.

    Raises NotPositiveDefinite if some nodal Hessian is not positive definite.
    """
    g = field.grid
    H = field.stencil_hessians()
    if not np.all(_is_pd(H)):
        bad = int(np.sum(~_is_pd(H)))
        raise NotPositiveDefinite(f"Hessian not positive definite at {bad} nodes")
    inv, det = _inv2(H)
    xi = g.canonical_stencil[0] + np.column_stack([g.G1s @ field.f, g.G2s @ field.f])
    return HessianData(g.st_points, H, inv, det, xi)


def _inverse_on_grid(field):
    hd = field.hessian_data
    return field._on_grid(hd.u_inv)


def abreu_operator(field):
    """Nodal ``sum_ij d_i d_j u^{ij}`` on the grid (NaN where undefined)."""
    U = _inverse_on_grid(field)
    h2 = field.grid.h ** 2
    out = np.full(field.grid.shape, np.nan)
    a, b, c = U[..., 0, 0], U[..., 0, 1], U[..., 1, 1]
    out[1:-1, 1:-1] = (
        (a[2:, 1:-1] - 2 * a[1:-1, 1:-1] + a[:-2, 1:-1]) / h2
        + (c[1:-1, 2:] - 2 * c[1:-1, 1:-1] + c[1:-1, :-2]) / h2
        + 2 * (b[2:, 2:] - b[2:, :-2] - b[:-2, 2:] + b[:-2, :-2]) / (4 * h2)
    )
    out[~field.grid.regular] = np.nan
    return out


def abreu_residual(field):
    """``abreu_operator + A``, NaN outside the reporting set (collar removed)."""
    res = abreu_operator(field) + field.A
    res[~field.grid.residual_mask()] = np.nan
    return res


def vector_field_V(field):
    """``V^i = -sum_j d_j u^{ij}`` at regular nodes, shape (nx, ny, 2)."""
    U = _inverse_on_grid(field)
    h = field.grid.h
    out = np.full(field.grid.shape + (2,), np.nan)
    d1 = lambda F: (F[2:, 1:-1] - F[:-2, 1:-1]) / (2 * h)
    d2 = lambda F: (F[1:-1, 2:] - F[1:-1, :-2]) / (2 * h)
    out[1:-1, 1:-1, 0] = -(d1(U[..., 0, 0]) + d2(U[..., 0, 1]))
    out[1:-1, 1:-1, 1] = -(d1(U[..., 1, 0]) + d2(U[..., 1, 1]))
    out[~field.grid.regular] = np.nan
    return out


def max_V_norm(field, exclude_collar=True):
    V = vector_field_V(field)
    mask = field.grid.residual_mask() if exclude_collar else field.grid.regular
    return float(np.max(np.linalg.norm(V[mask], axis=-1)))


_D1 = {2: np.array([-0.5, 0.0, 0.5]), 4: np.array([1, -8, 0, 8, -1]) / 12.0}
_D2 = {2: np.array([1.0, -2.0, 1.0]), 4: np.array([-1, 16, -30, 16, -1]) / 12.0}


def _point_inverse_hessians(field, x, h, order):
    if order not in _D1:
        raise ValueError("order must be 2 or 4")
    k = order // 2
    x = np.asarray(x, float)
    ks = np.arange(-k, k + 1)
    offs = np.stack(np.meshgrid(ks, ks, indexing="ij"), -1).reshape(-1, 2) * h
    pts = x[..., None, :] + offs
    H = np.asarray(field.hessian(pts))
    if not np.all(_is_pd(H)):
        raise NotPositiveDefinite("Hessian not positive definite near the probe")
    inv, _ = _inv2(H)
    m = 2 * k + 1
    return inv.reshape(x.shape[:-1] + (m, m, 2, 2))


def abreu_at(field, x, h, order=2):
    """``sum_ij d_i d_j u^{ij}`` at points ``x`` of any field-like object.

    The inverse Hessian comes from ``field.hessian`` on a square stencil of
    spacing ``h``; ``order=2`` is the grid stencil, ``order=4`` the
    fourth-order centred one.
    """
    U = _point_inverse_hessians(field, x, h, order)
    k = order // 2
    d1, d2 = _D1[order], _D2[order]
    a, b, c = U[..., 0, 0], U[..., 0, 1], U[..., 1, 1]
    a11 = np.einsum("...ij,i->...", a[..., :, k:k + 1], d2)
    c22 = np.einsum("...ij,j->...", c[..., k:k + 1, :], d2)
    b12 = np.einsum("...ij,i,j->...", b, d1, d1)
    return (a11 + c22 + 2.0 * b12) / h**2


def vector_field_V_at(field, x, h, order=2):
    """``V^i = -sum_j d_j u^{ij}`` at points ``x`` by centred differences."""
    U = _point_inverse_hessians(field, x, h, order)
    k = order // 2
    d1 = _D1[order]
    g1 = np.einsum("...imn,i->...mn", U[..., :, k, :, :], d1) / h
    g2 = np.einsum("...jmn,j->...mn", U[..., k, :, :, :], d1) / h
    return -np.stack([g1[..., 0, 0] + g2[..., 0, 1], g1[..., 1, 0] + g2[..., 1, 1]], -1)


def correction_functional(grid, f, H=None):
    """``-sum_n w_n log det(I + H0^-1 D^2 f) + c.f`` (infinite if infeasible)."""
    if H is None:
        H = PotentialField(grid, f).quad_hessians()
    if not np.all(_is_pd(H)):
        return np.inf
    _, det = _inv2(H)
    ld = np.log(det) - grid.canonical_quad[1]
    return float(-(grid.q_weights @ ld) + grid.c @ f)


def mabuchi_M(field):
    """Discrete ``M(u) = -int log det u_ij + L(u)``.

    The canonical part is integrated to high accuracy; the dependence on f
    enters through cell-wise log-det quadrature and the discrete L.
    """
    g = field.grid
    H = field.quad_hessians()
    if not np.all(_is_pd(H)):
        raise NotPositiveDefinite("Hessian not positive definite")
    return g.canonical_M[0] + correction_functional(g, field.f, H)


def L_of_potential(field):
    """``L(u) = L(u0) + L_h(f)``."""
    return field.grid.canonical_M[1] + float(field.grid.c @ field.f)


def write_potential_csv(field, path):
    """Rows (x1, x2, u, xi1, xi2, J, abreu_residual) over stencil nodes."""
    hd = field.hessian_data
    g = field.grid
    u = canonical_potential(g.polytope, hd.points)[0] + field.f[g.st_in_unk]
    res = abreu_operator(field).ravel()[g.st_flat] + field.A
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "u", "xi1", "xi2", "J", "abreu_residual"])
        for p, uu, xi, J, r in zip(hd.points, u, hd.xi, hd.J, res):
            w.writerow([f"{p[0]:.12g}", f"{p[1]:.12g}", f"{uu:.12g}", f"{xi[0]:.12g}",
                        f"{xi[1]:.12g}", f"{J:.12g}", "" if np.isnan(r) else f"{r:.12g}"])
