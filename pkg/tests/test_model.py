import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from basinflow import grid, model
from basinflow.grid import RectDomain
from basinflow.model import NonlinearityModel, NonlocalModel


def test_example2_pointwise_values():
    spec = model.example2()
    # f(2) = 2^1.4 + 2^1.2, odd
    expected = 2**1.4 + 2**1.2
    assert model.f_eval(spec.f, 2.0) == pytest.approx(expected, rel=1e-14)
    assert model.f_eval(spec.f, -2.0) == pytest.approx(-expected, rel=1e-14)
    assert model.F_eval(spec.f, 2.0) == pytest.approx(2**2.4 / 2.4 + 2**2.2 / 2.2, rel=1e-14)
    assert model.g_eval(spec.g, -1.5) == pytest.approx(1.5**3, rel=1e-14)
    assert spec.f.gamma == pytest.approx(0.2)
    assert spec.dimension == 3


def test_example1_pointwise_values():
    spec = model.example1()
    # f(2) = |2|^(p-2) * 2 * e^{2^tau} with p = 3, tau = 0.6
    assert model.f_eval(spec.f, 2.0) == pytest.approx(4.0 * math.exp(2.0**0.6), rel=1e-13)
    assert model.g_eval(spec.g, 1.0) == pytest.approx(math.e, rel=1e-14)
    assert spec.f.gamma == pytest.approx(1.0)


def test_cubic_is_plain_cube():
    f = model.cubic().f
    t = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(f.f(t), t**3, rtol=1e-14)
    np.testing.assert_allclose(f.F(t), t**4 / 4, rtol=1e-14)
    np.testing.assert_allclose(f.df(t), 3 * t**2, rtol=1e-14)


@pytest.mark.parametrize("t", [0.3, 1.0, 2.5, -4.0, 40.0])
def test_exponential_primitive_matches_adaptive_quadrature(t):
    f = model.example1().f
    ref, _ = integrate.quad(lambda s: float(f.f(s)), 0.0, t, epsabs=1e-13, epsrel=1e-13, limit=200)
    assert float(f.F(t)) == pytest.approx(ref, rel=1e-10, abs=1e-12)
    assert model.F_eval(f, t) == pytest.approx(ref, rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("name", ["example1", "example2", "cubic"])
def test_derivatives_match_finite_differences(name):
    spec = model.preset(name)
    t = np.array([-2.2, -0.7, 0.4, 1.3, 2.9])
    h = 1e-6
    np.testing.assert_allclose(spec.f.df(t), (spec.f.f(t + h) - spec.f.f(t - h)) / (2 * h), rtol=1e-6)
    np.testing.assert_allclose((spec.f.F(t + h) - spec.f.F(t - h)) / (2 * h), spec.f.f(t), rtol=1e-6)
    np.testing.assert_allclose(spec.g.dg(t), (spec.g.g(t + h) - spec.g.g(t - h)) / (2 * h), rtol=1e-6)


def test_terms_agree_with_separate_evaluators():
    for name in ("example1", "example2", "cubic", "heat"):
        f = model.preset(name).f
        t = np.linspace(-3, 3, 31)
        fu, dfu, Fu = f.terms(t)
        np.testing.assert_allclose(fu, f.f(t), rtol=1e-14)
        np.testing.assert_allclose(dfu, f.df(t), rtol=1e-14)
        np.testing.assert_allclose(Fu, f.F(t), rtol=1e-13)


def test_psi_identity_and_saturation():
    d = RectDomain(model.EXAMPLE2_L, model.EXAMPLE2_L, 9, 9)
    spec = model.example2(d)
    x = (1.0, 1.5)
    z = 0.5 * spec.a.K
    a = model.a_eval(spec.a, x, z)
    assert a > 1.0
    t = 0.8
    assert model.psi_eval(spec, x, t, z) == pytest.approx((1 / a - 1) * model.f_eval(spec.f, t), rel=1e-14)
    # a * (f + psi) = f pointwise
    assert a * (model.f_eval(spec.f, t) + model.psi_eval(spec, x, t, z)) == pytest.approx(
        model.f_eval(spec.f, t), rel=1e-14)
    u = np.random.default_rng(0).standard_normal(d.shape)
    for zs in (spec.a.K, 1.5 * spec.a.K, -spec.a.K, 1e6):
        assert spec.saturated(zs)
        assert np.all(spec.psi(u, zs) == 0.0)
        assert model.psi_eval(spec, x, t, zs) == 0.0
        assert np.array_equal(spec.phi(u, zs), spec.f.f(u))


def test_coefficient_bounds():
    spec = model.example2()
    z = np.linspace(-2 * spec.a.K, 2 * spec.a.K, 101)
    X, Y = spec.domain.mesh
    for zz in z:
        a = spec.a.a(X, Y, zz)
        assert np.all(a >= spec.a.a0 - 1e-15)
    assert spec.a.floor > -1


def test_trivial_coefficient_presets():
    for name in ("cubic", "heat"):
        spec = model.preset(name)
        assert spec.a.trivial
        assert spec.saturated(0.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(kind="polynomial", p=1.0, r=1.2),
        dict(kind="polynomial", p=1.4, r=0.9),
        dict(kind="exponential", p=3.0, tau=1.2),
        dict(kind="exponential", p=2.0, tau=0.6),
        dict(kind="polynomial", gamma=0.0),
        dict(kind="cosine"),
    ],
)
def test_nonlinearity_validation(kwargs):
    with pytest.raises(ValueError):
        NonlinearityModel(**kwargs)


def test_other_validation():
    with pytest.raises(ValueError):
        NonlocalModel("power", q=0.5)
    with pytest.raises(ValueError):
        NonlocalModel("exponential", xi=2.5)
    with pytest.raises(ValueError):
        model.coefficient(RectDomain(), K=-1.0)
    with pytest.raises(ValueError):
        model.coefficient(RectDomain(), amplitude=-1.5)
    with pytest.raises(ValueError):
        model.coefficient(RectDomain(), h="sigmoid")
    with pytest.raises(ValueError):
        model.example1(xi=1.1)  # needs 2 tau < xi
    with pytest.raises(ValueError):
        model.preset("nope")
    with pytest.raises(ValueError):
        model.cubic(p=5.0)


def test_quadrature_error_is_arithmetic():
    assert issubclass(model.QuadratureError, ArithmeticError)
    f = NonlinearityModel("custom", func=lambda t: np.where(np.asarray(t) > 0, 1 / np.sqrt(np.abs(t) + 1e-300), 0.0),
                          F_mode="quadrature")
    with pytest.raises(model.QuadratureError):
        model.F_eval(f, 1.0, tol=1e-15)


def test_energy_of_zero_and_scaling():
    spec = model.example2(RectDomain(model.EXAMPLE2_L, model.EXAMPLE2_L, 9, 9))
    d = spec.domain
    assert grid.energy(np.zeros(d.shape), spec) == 0.0
    e1 = grid.eigenmode(d)
    # E(s e1) is positive for small s and negative for large s
    assert grid.energy(0.01 * e1, spec) > 0
    assert grid.energy(100.0 * e1, spec) < 0


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 50.0), st.booleans(), st.sampled_from(["example1", "example2", "cubic"]))
def test_ambrosetti_rabinowitz(t, neg, name):
    f = model.preset(name).f
    t = -t if neg else t
    F = float(f.F(t))
    assert F > 0
    assert float(f.f(t)) * t >= (2.0 + f.gamma) * F * (1 - 1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-30.0, 30.0))
def test_odd_nonlinearity(t):
    for name in ("example1", "example2", "cubic"):
        f = model.preset(name).f
        assert float(f.f(-t)) == -float(f.f(t))
        assert float(f.F(-t)) == pytest.approx(float(f.F(t)), rel=1e-12)
