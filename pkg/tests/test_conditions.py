import numpy as np
import pytest

from basinflow import conditions, model
from basinflow.conditions import FAIL, PASS, SamplePlan


def h_violator():
    spec = model.example2()
    return spec.with_(g=model.NonlocalModel("constant", q=-1.0))


def f3_violator():
    spec = model.example2()
    return spec.with_(f=model.NonlinearityModel("linear", p=1.0, r=None, gamma=0.5))


def a2_violator():
    spec = model.example2()
    return spec.with_(a=model.coefficient(spec.domain, spec.a.K, "sinsin", "gauss", 0.5))


@pytest.mark.parametrize("name", ["example1", "example2"])
def test_presets_pass(name):
    rep = conditions.verify_conditions(model.preset(name))
    assert rep.passed, rep.rows()
    assert set(rep.results) == set(conditions.CONDITIONS)
    assert np.isfinite(rep.constants["c3"]) and np.isfinite(rep.constants["c4"])


@pytest.mark.parametrize(
    "build,name",
    [(h_violator, "H"), (f3_violator, "f3"), (a2_violator, "a2")],
)
def test_violators_fail_with_witness(build, name):
    rep = conditions.verify_conditions(build())
    assert not rep.passed
    r = rep.results[name]
    assert r.verdict == FAIL
    assert r.witness is not None and all(np.isfinite(v) for v in r.witness)
    assert name in rep.failures()


def test_h_witness_makes_inequality_false():
    spec = h_violator()
    r = conditions.verify_conditions(spec).results["H"]
    t = r.witness[0]
    # (H) fails because g + 1 = 0 at every t while f(t)^2 > 0
    assert spec.g.g(t) + 1.0 <= 0.0 < spec.f.f(t) ** 2


def test_f3_witness_breaks_ar():
    spec = f3_violator()
    t = conditions.verify_conditions(spec).results["f3"].witness[0]
    assert spec.f.f(t) * t < (2 + spec.f.gamma) * spec.f.F(t)


def test_a2_witness_is_unsaturated():
    spec = a2_violator()
    r = conditions.verify_conditions(spec).results["a2"]
    x, y, z, a = r.witness
    assert abs(z) >= spec.a.K
    assert spec.a.a(x, y, z) == pytest.approx(a)
    assert a != 1.0


def test_heat_fails_superlinearity():
    rep = conditions.verify_conditions(model.heat())
    assert "f3" in rep.failures()


def test_cubic_passes_local_conditions():
    rep = conditions.verify_conditions(model.cubic())
    for name in ("f2", "f3", "a1", "a2"):
        assert rep.results[name].verdict == PASS


def test_rows_are_ordered_and_complete():
    rep = conditions.verify_conditions(model.example2(), SamplePlan(n_t=2000))
    rows = rep.rows()
    assert [r[0] for r in rows] == list(conditions.CONDITIONS)
    assert all(r[1] in (PASS, FAIL, conditions.INCONCLUSIVE) for r in rows)


def test_sample_plan_range():
    plan = SamplePlan()
    assert plan.resolve_t_max(model.example2()) == 1e3
    tmax = plan.resolve_t_max(model.example1())
    assert tmax ** 1.5 == pytest.approx(600.0)
    t = plan.t_samples(model.example2())
    assert np.all(t != 0) and np.allclose(t, -t[::-1])


def test_wrapper_in_model_module():
    assert model.verify_conditions(model.example2()).passed
