import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abreukit.analytic import (
    AxiSymField,
    F_pm,
    JoyceField,
    JoyceParams,
    ModelField,
    OneDFamily,
    check_axisym_harmonic,
    joyce_axisym_fields,
    joyce_hessian,
    joyce_inverse,
    joyce_inverse_closed,
    joyce_inverse_printed,
    joyce_map,
    joyce_potential,
    joyce_r,
    model_potentials,
    one_d_family,
    taub_nut_identity,
    taub_nut_identity_printed,
)
from abreukit.errors import NewtonDiverged, OriginSingular, OutsideDomain
from abreukit.potential import abreu_at

PARAMS = [JoyceParams(1, 1), JoyceParams(1, 2), JoyceParams(3, 0.5)]
EPS = [0.1, 0.03, 0.01, 0.003]


def patch(n=12):
    t = np.linspace(0.5, 5.0, n)
    return np.stack(np.meshgrid(t, t, indexing="ij"), -1).reshape(-1, 2)


# -- models ------------------------------------------------------------------


@pytest.mark.parametrize("name,a", [("flat", None), ("half_flat", None), ("shear", 0.5),
                                    ("square_product", None)])
def test_model_derivatives_consistent(name, a, rng):
    x = rng.uniform(0.2, 0.8, (10, 2))
    u, g, H = model_potentials(name, x, a)
    h = 1e-6
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        up = model_potentials(name, x + e, a)
        um = model_potentials(name, x - e, a)
        np.testing.assert_allclose((up[0] - um[0]) / (2 * h), g[:, i], atol=1e-7)
        np.testing.assert_allclose((up[1] - um[1]) / (2 * h), H[:, i], rtol=1e-6, atol=1e-6)


def test_model_domains():
    with pytest.raises(OutsideDomain):
        model_potentials("flat", np.array([-0.1, 1.0]))
    with pytest.raises(OutsideDomain):
        model_potentials("shear", np.array([-0.1, 1.0]), 1.0)
    with pytest.raises(ValueError):
        model_potentials("nope", np.array([0.1, 1.0]))
    u, _, _ = model_potentials("flat", np.array([0.0, 1.0]))
    assert u == 0.0


def test_model_field_affine_shift():
    fld = ModelField("flat", affine=(1.0, 2.0, -1.0))
    x = np.array([0.5, 2.0])
    assert fld.value(x) == pytest.approx(0.5 * np.log(0.5) + 2 * np.log(2) + 1 + 1 - 2)
    np.testing.assert_allclose(fld.gradient(x), np.log(x) + 1 + [2, -1])


# -- axially symmetric harmonic functions --------------------------------------


def test_F_pm_identities(rng):
    H = rng.uniform(-5, 5, 100)
    r = rng.uniform(0, 5, 100)
    Fp, Fm = F_pm(H, r)
    np.testing.assert_allclose(Fp * Fm, r * r / 4, rtol=1e-13, atol=1e-300)
    np.testing.assert_allclose(Fp - Fm, H, atol=1e-12)
    np.testing.assert_allclose(Fp + Fm, np.hypot(H, r), rtol=1e-14)


def test_F_pm_no_cancellation():
    Fp, Fm = F_pm(1e8, 1e-3)
    assert Fm == pytest.approx(0.25e-6 / 1e8, rel=1e-14)
    Fp, Fm = F_pm(-1e8, 1e-3)
    assert Fp == pytest.approx(0.25e-6 / 1e8, rel=1e-14)


def test_F_pm_singular_origin():
    with pytest.raises(OriginSingular):
        F_pm(0.0, 0.0)
    with pytest.raises(OutsideDomain):
        F_pm(1.0, -1.0)


def test_log_F_pm_harmonic():
    r, H = np.meshgrid(np.linspace(0.5, 3, 8), np.linspace(-2, 2, 8))
    for k in range(2):
        fld = AxiSymField(lambda rr, hh, k=k: np.log(F_pm(hh, rr)[k]))
        assert check_axisym_harmonic(fld, r, H)["harmonic"] < 1e-6


@pytest.mark.parametrize("params", PARAMS)
def test_joyce_axisym_pairs(params):
    r, H = np.meshgrid(np.linspace(0.5, 3, 8), np.linspace(-2, 2, 8))
    for fld in joyce_axisym_fields(params):
        res = check_axisym_harmonic(fld, r, H)
        assert res["harmonic"] < 1e-6
        assert res["conjugate"] < 1e-6
        assert res["system"] < 1e-6


def test_axisym_patch_off_axis():
    fld = AxiSymField(lambda r, H: r * 0)
    with pytest.raises(OutsideDomain):
        check_axisym_harmonic(fld, np.array([1e-5]), np.array([0.0]))


# -- quadrant family -----------------------------------------------------------


def test_params_validated():
    with pytest.raises(ValueError):
        JoyceParams(0, 1)


@pytest.mark.parametrize("params", PARAMS)
def test_joyce_round_trip(params):
    x = patch(50)
    y1, y2 = joyce_inverse(params, x[:, 0], x[:, 1])
    x1, x2 = joyce_map(params, y1, y2)
    assert np.max(np.abs(np.c_[x1, x2] - x)) < 1e-10


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(1e-6, 50), st.floats(1e-6, 50))
def test_joyce_closed_form_matches_newton(a1, a2, x1, x2):
    p = JoyceParams(a1, a2)
    yn = np.array(joyce_inverse(p, x1, x2))
    yc = np.array(joyce_inverse_closed(p, x1, x2))
    np.testing.assert_allclose(yc, yn, rtol=1e-10, atol=1e-14)


def test_printed_inverse_is_not_an_inverse():
    p = JoyceParams(1, 2)
    y = joyce_inverse_printed(p, 2.0, 3.0)
    x = joyce_map(p, *y)
    assert abs(x[0] - 2.0) + abs(x[1] - 3.0) > 1.0


def test_joyce_inverse_domain_and_divergence():
    p = JoyceParams(1, 1)
    with pytest.raises(OutsideDomain):
        joyce_inverse(p, -1.0, 1.0)
    with pytest.raises(NewtonDiverged):
        joyce_inverse(p, 1e6, 3.0, max_iter=2)


@pytest.mark.parametrize("params", PARAMS)
def test_joyce_derivatives_consistent(params):
    x = patch(5)
    h = 1e-5
    _, g = joyce_potential(params, x)
    H = joyce_hessian(params, x)
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        up, gp = joyce_potential(params, x + e)
        um, gm = joyce_potential(params, x - e)
        np.testing.assert_allclose((up - um) / (2 * h), g[:, i], atol=1e-8)
        np.testing.assert_allclose((gp - gm) / (2 * h), H[:, i], atol=1e-7)


@pytest.mark.parametrize("params", PARAMS)
def test_joyce_scalar_flat(params):
    x = patch(12)
    res = abreu_at(JoyceField(params), x, 1e-3, order=4)
    assert np.max(np.abs(res)) < 1e-6


def test_taub_nut_identity():
    p = JoyceParams(1.5, 1.5)
    assert np.max(np.abs(taub_nut_identity(p, patch(20)))) < 1e-12
    r = joyce_r(p, np.array([[1.0, 1.0]]))
    assert r[0] > 0


def test_taub_nut_identity_needs_equal_parameters():
    assert np.max(np.abs(taub_nut_identity(JoyceParams(1, 2), patch(5)))) > 1e-3


def test_taub_nut_printed_form_differs():
    """The relation with ``log r`` misses by ``log r - 2 log 2`` pointwise."""
    p = JoyceParams(1, 1)
    x = patch(10)
    diff = taub_nut_identity_printed(p, x)
    r = joyce_r(p, x)
    np.testing.assert_allclose(diff, np.log(r) - 2 * np.log(2), atol=1e-12)


# -- one-dimensional family --------------------------------------------------------


def test_one_d_blend_is_c2():
    fam = OneDFamily(0.1)
    for b in OneDFamily.BLEND:
        for k, fn in enumerate((fam.f, fam.f_second)):
            lo, hi = fn(b - 1e-9), fn(b + 1e-9)
            assert abs(lo - hi) < 1e-6
    x = np.linspace(-0.99, 0.99, 201)
    assert np.all(fam.f(x) > 0)


@pytest.mark.parametrize("eps", EPS)
def test_one_d_U_solves_equation(eps):
    fam = OneDFamily(eps)
    x = np.linspace(-0.9, 0.9, 37)
    h = 1e-3 * eps
    d2 = (fam.dU(x + h) - fam.dU(x - h)) / (2 * h)
    np.testing.assert_allclose(d2, fam.d2U(x), rtol=1e-5)
    assert fam.dU(0.0) == 0.0


@pytest.mark.parametrize("eps", EPS)
def test_one_d_n_eps_constant_and_closed_form(eps):
    minus, n = one_d_family(eps, "at_minus_half")
    plus, _ = one_d_family(eps, "at_plus_half")
    x = np.linspace(-0.95, 0.95, 41)
    gap = minus.dU(x) - plus.dU(x)
    assert np.std(gap) < 1e-9 * abs(n)
    assert n == pytest.approx(np.mean(gap), rel=1e-12)
    assert n == pytest.approx(minus.n_eps_closed_form(), rel=1e-12)


def test_one_d_n_eps_increases():
    ns = [one_d_family(e)[1] for e in EPS]
    assert np.all(np.diff(ns) > 0)
    np.testing.assert_allclose(ns, [27.468, 100.72, 310.16, 1043.2], rtol=1e-4)


def test_one_d_U_difference_is_affine():
    minus = OneDFamily(0.1, "at_minus_half")
    plus = OneDFamily(0.1, "at_plus_half")
    x = np.linspace(-0.8, 0.8, 9)
    d = minus.U(x) - plus.U(x)
    fit = np.polyfit(x, d, 1)
    assert fit[0] == pytest.approx(minus.n_eps(), rel=1e-9)
    np.testing.assert_allclose(np.polyval(fit, x), d, atol=1e-9 * minus.n_eps())


def test_one_d_validation():
    with pytest.raises(ValueError):
        OneDFamily(0.0)
    with pytest.raises(ValueError):
        OneDFamily(0.1, "at_1")
    with pytest.raises(OutsideDomain):
        OneDFamily(0.1).U(1.0)
