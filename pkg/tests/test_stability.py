import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abreukit.errors import NotStable, ZeroHinge
from abreukit.geometry import AffineFunction, build_polytope, monomial
from abreukit.stability import (
    ScanConfig,
    determine_A_and_futaki,
    evaluate_L,
    evaluate_L_hinge,
    hinge_boundary_mass,
    hinge_values,
    scan_positivity,
    stability_constant_estimate,
)

from conftest import SQUARE, TRIANGLE, UNIT_SQUARE, monte_carlo_L, random_convex_polygon


def test_futaki_square(square):
    A, res = determine_A_and_futaki(square)
    assert A == 2.0
    assert np.all(np.abs(res) < 1e-14)


def test_futaki_unit_square(unit_square):
    A, res = determine_A_and_futaki(unit_square)
    assert A == pytest.approx(4.0, abs=1e-14)
    assert np.all(np.abs(res) < 1e-14)


def test_futaki_weighted_unit_square():
    A, res = determine_A_and_futaki(build_polytope(UNIT_SQUARE, [2, 1, 1, 1]))
    assert A == pytest.approx(5.0, abs=1e-14)
    assert abs(res[0]) < 1e-14
    # bottom edge is heavy: boundary x2-moment drops below the area moment
    assert res[2] == pytest.approx(-0.5, abs=1e-14)
    assert abs(res[1]) < 1e-14


def test_hinge_x1_on_square(square):
    assert evaluate_L_hinge(square, AffineFunction(1, 0, 0)) == pytest.approx(1.0, abs=1e-14)
    assert evaluate_L_hinge(square, AffineFunction(-1, 0, 0)) == pytest.approx(1.0, abs=1e-14)
    assert hinge_boundary_mass(square, AffineFunction(1, 0, 0)) == pytest.approx(3.0, abs=1e-14)


def test_hinge_affine_null(square, triangle):
    for P in (square, triangle):
        lam = AffineFunction(0.3, -0.2, 5.0)  # positive on all of P
        assert abs(evaluate_L_hinge(P, lam)) < 1e-13


def test_zero_hinge(square):
    with pytest.raises(ZeroHinge):
        evaluate_L_hinge(square, AffineFunction(1, 0, -1))


@pytest.mark.filterwarnings("ignore:edges .* have no rational normal")
def test_vectorised_matches_clipping(rng):
    for _ in range(100):
        verts = random_convex_polygon(rng)
        P = build_polytope(verts, rng.uniform(0.5, 2, len(verts)))
        n = rng.normal(size=2)
        lo, hi = np.sort(P.polygon.vertices @ n)[[0, -1]]
        c = rng.uniform(lo, hi)
        L, B = hinge_values(P, n[None], np.array([c]))
        lam = AffineFunction(n[0], n[1], -c)
        assert L[0] == pytest.approx(evaluate_L_hinge(P, lam), rel=1e-10, abs=1e-12)
        assert B[0] == pytest.approx(hinge_boundary_mass(P, lam), rel=1e-10, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 100), st.floats(0, 2 * np.pi), st.floats(-0.9, 0.9))
def test_scale_covariance(s, th, c):
    P = build_polytope(SQUARE, [1, 1, 1, 1])
    lam = AffineFunction(np.cos(th), np.sin(th), -c)
    assert evaluate_L_hinge(P, lam.scaled(s)) == pytest.approx(
        s * evaluate_L_hinge(P, lam), rel=1e-10, abs=1e-13
    )


def test_integration_by_parts_square(square, rng):
    """L(f) = int f_ij u^{ij} for the product solution, f quadratic."""
    h = 1.0 / 128
    x = -1 + h * (np.arange(256) + 0.5)
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    # inverse Hessian of the product potential is diag((1 - x1^2)/2, (1 - x2^2)/2)
    g11 = np.sum((1 - X1**2) / 2) * h * h
    g22 = np.sum((1 - X2**2) / 2) * h * h
    for _ in range(20):
        c = np.zeros((3, 3))
        c[2, 0], c[1, 1], c[0, 2] = rng.normal(size=3)
        c[1, 0], c[0, 1], c[0, 0] = rng.normal(size=3)
        rhs = 2 * c[2, 0] * g11 + 2 * c[0, 2] * g22
        assert evaluate_L(square, c) == pytest.approx(rhs, abs=1e-3)


def test_scan_square_stable(square):
    rep = scan_positivity(square)
    assert rep.status == "stable"
    assert rep.min_L == pytest.approx(1.0 / 3.0, abs=1e-9)
    assert rep.C_estimate == pytest.approx(3.0, abs=1e-8)
    assert stability_constant_estimate(square, rep) == rep.C_estimate
    assert hinge_boundary_mass(square, rep.argmin_lambda.lam) == pytest.approx(1.0, abs=1e-12)
    assert any("hinge" in n for n in rep.notes)


def test_scan_incompatible_is_inconclusive():
    rep = scan_positivity(build_polytope(UNIT_SQUARE, [10, 1, 1, 1]))
    assert rep.status == "inconclusive"
    assert "moment residual" in rep.notes[-1]


def test_scan_triangle_against_brute_force(triangle):
    """Independent dense grid over crease parameters using the clipping path."""
    rep = scan_positivity(triangle)
    assert rep.status == "stable"
    best = np.inf
    g = triangle.polygon.centroid
    for th in np.linspace(0, 2 * np.pi, 240, endpoint=False):
        n = np.array([np.cos(th), np.sin(th)])
        c0, c1 = n @ g, np.max(triangle.polygon.vertices @ n)
        for c in c0 + (c1 - c0) * np.arange(120) / 120:
            lam = AffineFunction(n[0], n[1], -c)
            best = min(best, evaluate_L_hinge(triangle, lam) / hinge_boundary_mass(triangle, lam))
    assert rep.min_L <= best + 1e-12
    assert best - rep.min_L < 1e-3
    assert rep.min_L == pytest.approx(1.0 / 3.0, abs=1e-8)


def test_scan_destabilized_hexagon(unstable_hexagon, rng):
    rep = scan_positivity(unstable_hexagon)
    assert rep.status == "destabilized"
    assert rep.min_L < 0
    lam = rep.argmin_lambda.lam
    exact = evaluate_L_hinge(unstable_hexagon, lam)
    assert exact <= 0
    est, se = monte_carlo_L(unstable_hexagon, lambda p: np.maximum(lam(p), 0), 10**6, rng)
    assert abs(est - exact) < 4 * se
    assert est - 4 * se <= 0
    with pytest.raises(NotStable):
        stability_constant_estimate(unstable_hexagon, rep)


def test_scan_resolution_stability(square, unstable_hexagon):
    for P in (square, unstable_hexagon):
        a = scan_positivity(P).min_L
        b = scan_positivity(P, ScanConfig(n_angles=1440, n_offsets=512)).min_L
        assert abs(a - b) < 1e-4 * abs(a)


def test_estimate_scale_invariant():
    P = build_polytope(TRIANGLE, [1, 1, 1])
    e1 = scan_positivity(P).C_estimate
    Q = build_polytope(3.0 * np.array(TRIANGLE), [1, 1, 1])
    assert scan_positivity(Q).C_estimate == pytest.approx(e1, rel=1e-6)


def test_grid_csv(square, tmp_path):
    rep = scan_positivity(square, ScanConfig(n_angles=8, n_offsets=4))
    out = tmp_path / "grid.csv"
    rep.write_grid_csv(out)
    assert len(out.read_text().splitlines()) == 1 + 32
