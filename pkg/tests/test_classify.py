import numpy as np
import pytest

from basinflow import classify, flow, grid, model
from basinflow.classify import BLOWUP, DECAY, UNDECIDED, ClassifierConfig
from basinflow.flow import StepperConfig
from basinflow.grid import RectDomain


@pytest.fixture(scope="module")
def cubic16():
    return model.cubic(RectDomain(1.0, 1.0, 16, 16))


def test_config_validation():
    with pytest.raises(ValueError):
        ClassifierConfig(T_max=0.0)
    with pytest.raises(ValueError):
        ClassifierConfig(growth_window=3)
    with pytest.raises(ValueError):
        ClassifierConfig(eps_decay=1.0, M_blow=10.0)
    c = ClassifierConfig()
    assert c.decay_threshold(0.5) == 1e-6
    assert c.decay_threshold(20.0) == pytest.approx(2e-5)
    d = RectDomain()
    assert c.kstar(d) == pytest.approx(10 * np.sqrt(grid.eigenvalue(d)))


def test_zero_decays_immediately(cubic16):
    c = classify.classify_trajectory(np.zeros(cubic16.domain.shape), cubic16)
    assert c.verdict == DECAY
    assert c.t_detect == 0.0


def test_small_data_decays(cubic16):
    c = classify.classify_trajectory(0.5 * grid.eigenmode(cubic16.domain), cubic16)
    assert c.verdict == DECAY
    assert c.trigger == "norm_threshold"
    assert c.trace.h1[-1] <= c.eps_decay


def test_large_data_blows_up_with_certificate(cubic16):
    u0 = 50.0 * grid.eigenmode(cubic16.domain)
    c = classify.classify_trajectory(u0, cubic16, ClassifierConfig(confirm_blowup=True))
    assert c.verdict == BLOWUP
    assert np.isfinite(c.t_detect) and c.t_detect > 0
    cert = classify.blowup_sufficient(u0, cubic16)
    assert cert.holds
    assert cert.h1_0 > cert.Kstar
    assert cert.energy0 < -cert.Mhat
    conc = classify.concavity_indicator(c.trace, cubic16.f.gamma)
    assert conc.fraction >= 0.9


def test_confirm_blowup_keeps_detection_time(cubic16):
    u0 = 50.0 * grid.eigenmode(cubic16.domain)
    a = classify.classify_trajectory(u0, cubic16)
    b = classify.classify_trajectory(u0, cubic16, ClassifierConfig(confirm_blowup=True))
    assert a.verdict == b.verdict == BLOWUP
    assert a.t_detect == b.t_detect
    assert len(b.trace) > len(a.trace)
    assert np.all(np.diff(b.trace.t) > 0)
    assert b.trace.l2[-1] >= 1e6 or b.trace.status == flow.OVERFLOW


def test_certificate_refuses_small_or_positive_energy(cubic16):
    d = cubic16.domain
    cert = classify.blowup_sufficient(0.5 * grid.eigenmode(d), cubic16)
    assert not cert.holds and np.isnan(cert.Mhat)


def test_certificate_uses_coefficient_bound():
    spec = model.example2(RectDomain(model.EXAMPLE2_L, model.EXAMPLE2_L, 9, 9))
    cert = classify.blowup_sufficient(1e-3 * grid.eigenmode(spec.domain), spec)
    assert cert.threshold == pytest.approx(-spec.a.K / (2 + spec.f.gamma))
    assert not cert.holds


def test_concavity_of_empty_and_decaying_traces(cubic16):
    d = cubic16.domain
    zero = classify.classify_trajectory(np.zeros(d.shape), cubic16)
    assert classify.concavity_indicator(zero.trace, 2.0).empty
    dec = classify.classify_trajectory(0.5 * grid.eigenmode(d), cubic16)
    assert classify.concavity_indicator(dec.trace, 2.0).fraction <= 0.1
    with pytest.raises(ValueError):
        classify.concavity_indicator(dec.trace, 0.0)


def test_concavity_on_synthetic_blowup():
    """||u||^2 = 1/(T - t) gives H = -1/2 log(1 - t/T), ell = H^{-1} concave once H >= 1."""
    T = 1.0
    t = T * (1 - np.geomspace(1.0, 1e-6, 2000))
    l2 = 1.0 / np.sqrt(T - t)
    tr = flow.FlowTrace(t=t, l2=l2, h1=l2, energy=-l2, ut_l2=l2, z=l2, lyap_res=0 * t, status=flow.BLOWUP,
                        final=None)
    res = classify.concavity_indicator(tr, 2.0, tail=0.2)
    H = 0.5 * -np.log(1 - res.t / T)
    np.testing.assert_allclose(res.H, H, rtol=1e-4)
    assert res.H[int(0.8 * len(res.H))] > 1.0
    assert res.fraction == 1.0


def test_mhat_for_zero_nonlinearity():
    spec = model.heat(RectDomain(1.0, 1.0, 12, 12))
    K = 7.0
    est = classify.estimate_Mhat(spec, K, budget=3)
    # E(u) = ||u||_H1^2 / 2 on the whole sphere
    assert est.best_energy == pytest.approx(K**2 / 2, rel=1e-12)
    assert est.value == pytest.approx(-K**2 / 2, rel=1e-12)
    np.testing.assert_allclose(est.probe_energies, K**2 / 2, rtol=1e-12)


def test_mhat_budget_monotone(cubic16):
    K = ClassifierConfig().kstar(cubic16.domain)
    prev = np.inf
    for b in (1, 2, 4, 8):
        est = classify.estimate_Mhat(cubic16, K, budget=b, seed=3)
        assert est.best_energy <= prev
        assert grid.norm_h1(est.best, cubic16.domain) == pytest.approx(K, rel=1e-10)
        prev = est.best_energy
    with pytest.raises(ValueError):
        classify.estimate_Mhat(cubic16, K, budget=0)


def test_mhat_sphere_descent_beats_first_mode(cubic16):
    d = cubic16.domain
    K = ClassifierConfig().kstar(d)
    e1 = grid.eigenmode(d)
    start = grid.energy(K * e1 / grid.norm_h1(e1, d), cubic16)
    est = classify.estimate_Mhat(cubic16, K, budget=1)
    assert est.best_energy <= start


def test_classification_is_deterministic(cubic16):
    u0 = 3.0 * grid.eigenmode(cubic16.domain)
    a = classify.classify_trajectory(u0, cubic16)
    b = classify.classify_trajectory(u0, cubic16)
    assert a.verdict == b.verdict and a.t_detect == b.t_detect
    np.testing.assert_array_equal(a.trace.rows(), b.trace.rows())


def test_verdicts_monotone_along_ray():
    spec = model.example2(RectDomain(model.EXAMPLE2_L, model.EXAMPLE2_L, 9, 9))
    v = grid.eigenmode(spec.domain)
    v /= grid.norm_h1(v, spec.domain)
    verdicts = [classify.classify_trajectory(s * v, spec, ClassifierConfig(T_max=20.0),
                                             StepperConfig(dt=2e-3)).verdict for s in (0.5, 2.0, 8.0, 16.0)]
    assert verdicts[0] == DECAY and verdicts[-1] == BLOWUP
    first = verdicts.index(BLOWUP)
    assert all(x == BLOWUP for x in verdicts[first:])
    assert all(x == DECAY for x in verdicts[:first])


def test_solver_failure_without_growth_is_undecided():
    spec = model.heat(RectDomain(1.0, 1.0, 16, 16))
    u0 = np.random.default_rng(0).standard_normal(spec.domain.shape)
    c = classify.classify_trajectory(u0, spec, ClassifierConfig(),
                                     StepperConfig(dt=0.1, solver="cg", max_cg_iters=1))
    assert c.verdict == UNDECIDED
    assert c.trigger == "solver_failure"
    assert c.diagnostic


def test_undecided_at_tmax(cubic16):
    c = classify.classify_trajectory(0.5 * grid.eigenmode(cubic16.domain), cubic16, ClassifierConfig(T_max=1e-3))
    assert c.verdict == UNDECIDED
    assert c.trigger == "t_max"
    assert c.t_detect == 1e-3


def test_csv_row_matches_columns(cubic16):
    c = classify.classify_trajectory(np.zeros(cubic16.domain.shape), cubic16)
    assert len(c.csv_row()) == len(classify.CLASSIFICATION_COLUMNS)
