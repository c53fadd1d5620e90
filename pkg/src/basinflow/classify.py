"""Decay / blow-up verdicts for trajectories of the nonlocal heat flow."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.sparse.linalg import splu

from . import flow, grid
from .flow import FlowTrace, StepperConfig, StopRules

logger = logging.getLogger(__name__)

DECAY = "DecayToZero"
BLOWUP = "BlowUp"
UNDECIDED = "Undecided"


@dataclass(frozen=True)
class ClassifierConfig:
    """Finite surrogates for membership in the basin of attraction of zero.

    ``eps_decay=None`` means ``1e-6 * max(1, ||u0||_H1)``; ``Kstar=None`` means
    ten times ``sqrt(lambda_1)``, the H1 norm of the unit-L2 first mode.  With
    ``confirm_blowup`` a run stopped by the growth detector is continued until
    ``M_blow`` (or ``T_max``) so the stored trace covers the late regime; the
    verdict and ``t_detect`` are those of the detector.
    """

    eps_decay: Optional[float] = None
    M_blow: float = 1e6
    T_max: float = 50.0
    growth_window: int = 10
    growth_rate: float = 0.5
    Kstar: Optional[float] = None
    delta_e: Optional[float] = None
    stride: int = 1
    confirm_blowup: bool = False

    def __post_init__(self):
        if not self.T_max > 0:
            raise ValueError("T_max must be positive")
        if self.growth_window < 5:
            raise ValueError("growth_window must be at least 5")
        if self.eps_decay is not None and not (0 < self.eps_decay < 1e-3 * self.M_blow):
            raise ValueError("eps_decay must be positive and much smaller than M_blow")

    def decay_threshold(self, h1_0: float) -> float:
        return self.eps_decay if self.eps_decay is not None else 1e-6 * max(1.0, h1_0)

    def kstar(self, d: grid.RectDomain) -> float:
        return self.Kstar if self.Kstar is not None else 10.0 * np.sqrt(grid.eigenvalue(d))


@dataclass
class Classification:
    verdict: str
    t_detect: float
    trigger: str
    trace: FlowTrace
    energy0: float
    h1_0: float
    eps_decay: float
    diagnostic: str = ""
    decrease_rate: float = np.nan

    def csv_row(self):
        return [self.verdict, repr(float(self.t_detect)), self.trigger, repr(float(self.energy0)), repr(float(self.h1_0))]


CLASSIFICATION_COLUMNS = ["verdict", "t_detect", "trigger", "energy0", "h1_0"]


class _GrowthDetector:
    """Flags sustained exponential growth of ``||u||_L2^2`` at negative energy.

    Two consecutive disjoint windows of ``window`` samples must both show a
    least-squares log-slope above ``rate``.
    """

    def __init__(self, window: int, rate: float):
        self.window = window
        self.rate = rate

    def _slope(self, t, l2):
        y = 2.0 * np.log(l2)
        tt = t - t.mean()
        return float(np.dot(tt, y - y.mean()) / np.dot(tt, tt))

    def __call__(self, rec, state):
        W = self.window
        if len(rec.t) < 2 * W or rec.energy[-1] >= 0:
            return None
        t = np.array(rec.t[-2 * W:])
        l2 = np.array(rec.l2[-2 * W:])
        if np.any(l2 <= 0) or np.ptp(t[:W]) == 0 or np.ptp(t[W:]) == 0:
            return None
        if self._slope(t[:W], l2[:W]) > self.rate and self._slope(t[W:], l2[W:]) > self.rate:
            return flow.BLOWUP, "exp_growth"
        return None


def classify_trajectory(u0, spec, ccfg: ClassifierConfig = ClassifierConfig(),
                        scfg: StepperConfig = StepperConfig()) -> Classification:
    """Evolve ``u0`` and decide DecayToZero / BlowUp / Undecided."""
    d = spec.domain
    u0 = np.asarray(u0, dtype=float).reshape(d.shape)
    h1_0 = grid.norm_h1(u0, d)
    e0 = grid.energy(u0, spec)
    eps = ccfg.decay_threshold(h1_0)
    stop = StopRules(
        t_max=ccfg.T_max,
        decay_h1=eps,
        blow_l2=ccfg.M_blow,
        predicate=_GrowthDetector(ccfg.growth_window, ccfg.growth_rate),
    )
    trace = flow.evolve(u0, spec, scfg, stop, stride=ccfg.stride)
    t_end = float(trace.final.t)
    if ccfg.confirm_blowup and trace.status == flow.BLOWUP and trace.trigger == "exp_growth":
        trace = _continue(trace, spec, ccfg, scfg)
    diagnostic = ""
    if trace.status == flow.DECAYED:
        verdict, trigger = DECAY, "norm_threshold"
    elif trace.status == flow.OVERFLOW:
        verdict, trigger = BLOWUP, "overflow"
    elif trace.status == flow.BLOWUP:
        verdict, trigger = BLOWUP, trace.trigger
    elif trace.status == flow.SOLVER_FAILURE:
        tail = trace.l2[-ccfg.growth_window:]
        if len(tail) >= 2 and np.all(np.diff(tail) > 0):
            verdict, trigger = BLOWUP, "solver_failure"
        else:
            verdict, trigger = UNDECIDED, "solver_failure"
            diagnostic = "linear solve failed without preceding norm growth"
    else:
        verdict, trigger, t_end = UNDECIDED, "t_max", ccfg.T_max
    return Classification(verdict, t_end, trigger, trace, e0, h1_0, eps, diagnostic,
                          _decrease_rate(trace, ccfg.kstar(d)))


def _continue(trace: FlowTrace, spec, ccfg: ClassifierConfig, scfg: StepperConfig) -> FlowTrace:
    t0 = float(trace.final.t)
    stop = StopRules(t_max=max(ccfg.T_max - t0, 1e-300), blow_l2=ccfg.M_blow)
    more = flow.evolve(trace.final.u, spec, scfg, stop, stride=ccfg.stride)
    cols = {}
    for c in flow.TRACE_COLUMNS:
        tail = getattr(more, c)[1:]
        if c == "t":
            tail = tail + t0
        cols[c] = np.concatenate([getattr(trace, c), tail])
    more.final.t += t0
    return FlowTrace(**cols, status=trace.status, final=more.final, trigger=trace.trigger,
                     steps=trace.steps + more.steps, dt_min=min(trace.dt_min, more.dt_min))


def _decrease_rate(trace: FlowTrace, kstar: float) -> float:
    """Smallest observed ``-dE/dt`` over steps with ``||u||_H1 >= K*`` (NaN if none)."""
    ok = np.isfinite(trace.energy) & np.isfinite(trace.h1)
    t, e, h1 = trace.t[ok], trace.energy[ok], trace.h1[ok]
    if len(t) < 2:
        return np.nan
    rate = -np.diff(e) / np.diff(t)
    above = h1[1:] >= kstar
    return float(rate[above].min()) if np.any(above) else np.nan


@dataclass
class ConcavityResult:
    t: np.ndarray
    H: np.ndarray
    ell: np.ndarray
    second_diff: np.ndarray
    fraction: float

    @property
    def empty(self) -> bool:
        return len(self.t) == 0


def concavity_indicator(trace: FlowTrace, gamma: float, tail: float = 0.5) -> ConcavityResult:
    """Track ``ell(t) = H(t)^(-gamma/2)`` with ``H(t) = 1/2 int_0^t ||u||_L2^2``.

    Returns the fraction of the tail window (last ``tail`` share of samples) in
    which the discrete second derivative of ``ell`` is negative.  Samples where
    ``ell`` does not change beyond round-off are left out of the count.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    ok = np.isfinite(trace.l2)
    t, l2 = trace.t[ok], trace.l2[ok]
    nothing = ConcavityResult(np.array([]), np.array([]), np.array([]), np.array([]), 0.0)
    if len(t) < 3:
        return nothing
    H = cumulative_trapezoid(0.5 * l2**2, t, initial=0.0)
    pos = H > 0
    if pos.sum() < 3:
        return nothing
    t, H = t[pos], H[pos]
    ell = H ** (-gamma / 2.0)
    dt_l, dt_r = np.diff(t)[:-1], np.diff(t)[1:]
    sl = (ell[1:-1] - ell[:-2]) / dt_l
    sr = (ell[2:] - ell[1:-1]) / dt_r
    d2 = 2.0 * (sr - sl) / (dt_l + dt_r)
    moving = np.abs(ell[2:] - ell[1:-1]) + np.abs(ell[1:-1] - ell[:-2]) > 1e-10 * np.abs(ell[1:-1])
    start = int(np.floor((1.0 - tail) * len(d2)))
    window_d2, window_mov = d2[start:], moving[start:]
    n = int(window_mov.sum())
    frac = float(np.sum((window_d2 < 0) & window_mov) / n) if n else 0.0
    return ConcavityResult(t, H, ell, d2, frac)


@lru_cache(maxsize=16)
def _laplacian_factor(d: grid.RectDomain):
    return splu(d.laplacian)


@dataclass
class MhatEstimate:
    """``value`` estimates ``M_hat = -inf_{||u||_H1 = K*} E(u)``; ``best_energy`` is the inf found."""

    value: float
    best_energy: float
    probe_energies: list
    best: np.ndarray = field(repr=False, default=None)


def _sphere_start(spec, basis, Kstar, i, seed):
    d = spec.domain
    if i < 3:
        u = basis.mode(i)
    else:
        rng = np.random.default_rng([seed, i])
        c = np.zeros(d.shape)
        k = min(4, d.nx)
        l = min(4, d.ny)
        c[:k, :l] = rng.standard_normal((k, l)) / (1.0 + np.add.outer(np.arange(k), np.arange(l)))
        u = basis.synthesize(c)
    return Kstar * u / grid.norm_h1(u, d)


def _descend_on_sphere(u, spec, Kstar, iters, gtol=1e-9):
    """Riemannian gradient descent of E on the H1 sphere with Armijo backtracking."""
    d = spec.domain
    lu = _laplacian_factor(d)
    E = grid.energy(u, spec)
    eta = 1.0
    for _ in range(iters):
        # H1 Riesz representative of E'(u): u - A^{-1} f(u)
        g = u - lu.solve(spec.f.f(u).ravel()).reshape(d.shape)
        g -= grid.inner(grid.laplacian_apply(g, d), u, d) / Kstar**2 * u
        gn = grid.norm_h1(g, d)
        if gn <= gtol * Kstar:
            break
        eta = min(1.0, 2.0 * eta)
        while eta > 1e-12:
            w = u - eta * g
            w = Kstar * w / grid.norm_h1(w, d)
            Ew = grid.energy(w, spec)
            if Ew <= E - 1e-4 * eta * gn**2:
                break
            eta *= 0.5
        else:
            break
        u, E = w, Ew
    return u, E


def estimate_Mhat(spec, Kstar: float, budget: int = 4, seed: int = 0, iters: int = 200) -> MhatEstimate:
    """Multi-start projected descent of ``E`` on ``{||u||_H1 = K*}``.

    Restart ``i`` starts from eigenmode ``i`` for ``i < 3`` and from a smooth random
    field seeded by ``(seed, i)`` otherwise, so a larger budget only adds probes
    and the reported infimum never increases with budget.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    basis = grid.spectral_basis(spec.domain)
    probes = []
    best_u, best_E = None, np.inf
    for i in range(budget):
        u, E = _descend_on_sphere(_sphere_start(spec, basis, Kstar, i, seed), spec, Kstar, iters)
        probes.append(E)
        if E < best_E:
            best_u, best_E = u, E
    if not np.isfinite(best_E):
        raise ArithmeticError("energy on the K* sphere is non-finite for every restart")
    return MhatEstimate(value=-best_E, best_energy=best_E, probe_energies=probes, best=best_u)


@dataclass
class BlowupCertificate:
    holds: bool
    Kstar: float
    Mhat: float
    energy0: float
    h1_0: float
    threshold: float

    def csv_values(self):
        return [str(self.holds), repr(self.Kstar), repr(self.Mhat), repr(self.energy0), repr(self.h1_0)]


def blowup_sufficient(u0, spec, ccfg: ClassifierConfig = ClassifierConfig(), budget: int = 4,
                      seed: int = 0) -> BlowupCertificate:
    """Check ``||u0||_H1 > K*`` and ``E(u0) < min(-M_hat, -K/(2+gamma))``.

    ``M_hat`` is replaced by the sampled estimate of :func:`estimate_Mhat`.  With a
    trivial coefficient (``a = 1``) the second bound is taken in its ``K -> 0``
    limit, i.e. 0.
    """
    d = spec.domain
    u0 = np.asarray(u0, dtype=float).reshape(d.shape)
    Kstar = ccfg.kstar(d)
    h1_0 = grid.norm_h1(u0, d)
    e0 = grid.energy(u0, spec)
    K = 0.0 if spec.a.trivial else spec.a.K
    k_bound = -K / (2.0 + spec.f.gamma)
    if e0 >= min(0.0, k_bound) or h1_0 <= Kstar:
        return BlowupCertificate(False, Kstar, np.nan, e0, h1_0, k_bound)
    est = estimate_Mhat(spec, Kstar, budget, seed)
    threshold = min(-est.value, k_bound)
    return BlowupCertificate(bool(e0 < threshold), Kstar, est.value, e0, h1_0, threshold)
