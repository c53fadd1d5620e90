"""Sampled audit of the structural hypotheses on ``f``, ``g`` and ``a``.

Each check evaluates an inequality on a finite sample and returns ``pass``,
``fail`` (with a witness) or ``inconclusive``.  Statements about limits are
judged from fitted tail exponents over the sampled range, so a pass there means
"consistent on the sampled range", not a proof.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

PASS = "pass"
FAIL = "fail"
INCONCLUSIVE = "inconclusive"

CONDITIONS = ("H", "a1", "a2", "f1", "f2", "f3", "g", "NEWEQ1")

REL_TOL = 1e-10


@dataclass(frozen=True)
class SamplePlan:
    """Where the inequalities are sampled.

    ``t_max=None`` picks ``1e3`` for power-type models and, for exponential
    ones, the largest ``t`` whose exponent stays below 600.  The z-range is
    ``[-z_factor K, z_factor K]``.
    """

    t_max: Optional[float] = None
    n_t: int = 10_000
    n_x: int = 17
    n_z: int = 801
    z_factor: float = 3.0
    t_small: float = 1e-12

    def resolve_t_max(self, spec) -> float:
        if self.t_max is not None:
            return float(self.t_max)
        expo = [e for e in (spec.f.tau if spec.f.kind == "exponential" else None,
                            spec.g.xi if spec.g.kind == "exponential" else None) if e]
        if not expo:
            return 1e3
        return float(min(1e3, 600.0 ** (1.0 / max(expo))))

    def t_samples(self, spec) -> np.ndarray:
        """Symmetric, log-spaced sample of nonzero ``t`` in ``[t_small, t_max]``."""
        pos = np.geomspace(self.t_small, self.resolve_t_max(spec), self.n_t // 2)
        return np.concatenate([-pos[::-1], pos])


@dataclass
class ConditionResult:
    name: str
    verdict: str
    detail: str = ""
    witness: Optional[tuple] = None
    value: float = np.nan


@dataclass
class ConditionReport:
    results: dict
    constants: dict
    t_range: tuple
    z_range: tuple
    dimension: int
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.verdict == PASS for r in self.results.values())

    def failures(self) -> list:
        return [n for n, r in self.results.items() if r.verdict == FAIL]

    def rows(self):
        """``(condition, verdict, value, witness, detail)`` tuples in fixed order."""
        out = []
        for n in CONDITIONS:
            r = self.results[n]
            w = "" if r.witness is None else " ".join(repr(float(v)) for v in r.witness)
            out.append((n, r.verdict, repr(float(r.value)), w, r.detail))
        return out


def _tail_slope(t, y):
    """Least-squares slope of ``log y`` against ``log t`` over the top decade of ``t > 0``."""
    t, y = np.asarray(t), np.asarray(y)
    m = (t >= t.max() / 10.0) & (y > 0) & np.isfinite(y)
    if m.sum() < 3:
        return np.nan
    return float(np.polyfit(np.log(t[m]), np.log(y[m]), 1)[0])


def _check_H(spec, t):
    g = spec.g.g(t)
    bad = np.flatnonzero(g < 0)
    if bad.size:
        i = bad[0]
        return ConditionResult("H", FAIL, "g takes negative values", (t[i], g[i]), np.nan)
    f = spec.f.f(t)
    ratio = np.maximum(f * f, np.abs(f * t)) / (g + 1.0)
    C = float(np.max(ratio))
    if not np.isfinite(C):
        i = int(np.argmax(~np.isfinite(ratio)))
        return ConditionResult("H", FAIL, "ratio is not finite", (t[i],), C)
    pos = t > 0
    tail = ratio[pos][-max(10, pos.sum() // 20):]
    if tail[-1] >= C * (1 - 1e-12) and tail[-1] > tail[0]:
        return ConditionResult("H", INCONCLUSIVE, "ratio still growing at the end of the sampled range", None, C)
    return ConditionResult("H", PASS, "smallest feasible C reported", None, C)


def _check_a1(spec, X, Y, z):
    a = spec.a.a(X[..., None], Y[..., None], z[None, None, :])
    i = np.unravel_index(int(np.argmin(a)), a.shape)
    amin = float(a[i])
    if amin < spec.a.a0 * (1 - REL_TOL):
        return ConditionResult("a1", FAIL, f"a drops below a0 = {spec.a.a0:g}",
                               (X[i[:2]], Y[i[:2]], z[i[2]], amin), amin)
    return ConditionResult("a1", PASS, "minimum of a over the sample", None, amin)


def _check_a2(spec, X, Y, z):
    far = z[np.abs(z) >= spec.a.K]
    if far.size == 0:
        return ConditionResult("a2", INCONCLUSIVE, "no sampled z with |z| >= K")
    a = spec.a.a(X[..., None], Y[..., None], far[None, None, :])
    dev = np.abs(a - 1.0)
    i = np.unravel_index(int(np.argmax(dev)), dev.shape)
    if dev[i] > 0:
        return ConditionResult("a2", FAIL, "a differs from 1 beyond K",
                               (X[i[:2]], Y[i[:2]], far[i[2]], float(a[i])), float(dev[i]))
    return ConditionResult("a2", PASS, "a = 1 exactly for |z| >= K", None, 0.0)


def _growth_exponent(t, y, N):
    """Power-law exponent of ``y`` (N >= 3) or exponent of ``log y`` (N = 2)."""
    pos = t > 1.0
    tt, yy = t[pos], np.abs(y[pos])
    if N == 2:
        ly = np.log(np.maximum(yy, 1e-300))
        return _tail_slope(tt, np.where(ly > 0, ly, np.nan))
    return _tail_slope(tt, yy)


def _check_g(spec, t, N):
    tt = np.abs(t)
    g = spec.g.g(tt)
    if N == 2:
        kg = _growth_exponent(tt, g, 2)
        kd = _growth_exponent(tt, spec.g.dg(tt), 2)
        k = np.nanmax([kg, kd, 0.0])
        if k < 1.9:
            return ConditionResult("g", PASS, "log g and log g' grow like |t|^k with k < 2", None, k)
        if k > 2.1:
            return ConditionResult("g", FAIL, "log g grows at least like |t|^2", (float(tt.max()),), k)
        return ConditionResult("g", INCONCLUSIVE, "log-growth exponent too close to 2", None, k)
    crit = 2.0 * N / (N - 2.0)
    q = _growth_exponent(tt, g, N)
    if not np.isfinite(q):
        q = 0.0
    if q <= crit - 0.05:
        return ConditionResult("g", PASS, f"tail exponent below 2* = {crit:g}", None, q)
    if q > crit + 0.05:
        return ConditionResult("g", FAIL, f"tail exponent exceeds 2* = {crit:g}", (float(tt.max()),), q)
    return ConditionResult("g", INCONCLUSIVE, "tail exponent too close to 2*", None, q)


def _check_f1(spec, t, N):
    tt = np.abs(t)
    if N == 2:
        k = _growth_exponent(tt, spec.f.df(tt), 2)
        k = 0.0 if not np.isfinite(k) else k
        if k < 1.9:
            return ConditionResult("f1", PASS, "log f' grows like |t|^k with k < 2", None, k)
        if k > 2.1:
            return ConditionResult("f1", FAIL, "log f' grows at least like |t|^2", (float(tt.max()),), k)
        return ConditionResult("f1", INCONCLUSIVE, "log-growth exponent too close to 2", None, k)
    p = _growth_exponent(tt, spec.f.f(tt), N)
    p = 0.0 if not np.isfinite(p) else p
    # any q in [2, 2*] is admissible in (g) once g grows no faster than |t|^q,
    # so the loosest bound on the growth of f is 2*/2
    bound = N / (N - 2.0)
    if p < bound - 0.02:
        return ConditionResult("f1", PASS, f"tail exponent below 2*/2 = {bound:g}", None, p)
    if p > bound + 0.02:
        return ConditionResult("f1", FAIL, f"tail exponent exceeds 2*/2 = {bound:g}", (float(tt.max()),), p)
    return ConditionResult("f1", INCONCLUSIVE, "tail exponent too close to 2*/2", None, p)


def _check_f2(spec, plan: SamplePlan):
    t = np.geomspace(plan.t_small, 1e-1, 23)
    ratio = np.abs(spec.f.f(t) / t)
    last = float(ratio[0])
    if np.all(ratio == 0.0):
        return ConditionResult("f2", PASS, "f vanishes near 0", None, 0.0)
    # |f(t)/t| ~ t^k near 0; the limit is zero when k > 0
    m = (t <= 1e3 * plan.t_small) & (ratio > 0)
    k = float(np.polyfit(np.log(t[m]), np.log(ratio[m]), 1)[0]) if m.sum() >= 3 else np.nan
    if k > 0.05:
        return ConditionResult("f2", PASS, f"|f(t)/t| ~ t^{k:.3g} near 0", None, last)
    if k < 0.01 or not np.isfinite(k):
        return ConditionResult("f2", FAIL, "|f(t)/t| does not decay as t -> 0", (float(t[0]), last), last)
    return ConditionResult("f2", INCONCLUSIVE, "slow decay of |f(t)/t| near 0", None, last)


def _check_f3(spec, t):
    gamma = spec.f.gamma
    fs = spec.f.f(t) * t
    F = spec.f.F(t)
    rhs = (2.0 + gamma) * F
    bad = (fs < rhs - REL_TOL * np.abs(rhs)) | (F <= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        margin = float(np.nanmin(np.where(F > 0, fs / F - 2.0, np.nan))) if np.any(F > 0) else np.nan
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        return ConditionResult("f3", FAIL, f"f(s)s < (2+gamma)F(s) or F(s) <= 0 with gamma = {gamma:g}",
                               (t[i], fs[i], rhs[i]), margin)
    return ConditionResult("f3", PASS, "largest admissible gamma over the sample reported", None, margin)


def _check_neweq1(spec, t):
    gamma = spec.f.gamma
    lhs = np.abs(t) ** (2.0 + gamma)
    ft = spec.f.f(t) * t
    big = np.abs(t) >= 1.0
    if np.any(big & (ft <= 0)):
        i = int(np.flatnonzero(big & (ft <= 0))[0])
        return ConditionResult("NEWEQ1", FAIL, "f(t)t <= 0 at large |t|", (t[i], ft[i])), (np.inf, np.inf)
    c3 = float(np.max(lhs[big] / ft[big])) if np.any(big) else 0.0
    c4 = float(max(0.0, np.max(lhs - c3 * ft)))
    pos = big & (t > 0)
    tail = (lhs[pos] / ft[pos])[-max(10, pos.sum() // 20):]
    if tail[-1] >= c3 * (1 - 1e-12) and tail[-1] > tail[0]:
        return ConditionResult("NEWEQ1", INCONCLUSIVE, "ratio |t|^(2+gamma)/(f t) still growing", None, c3), (c3, c4)
    return ConditionResult("NEWEQ1", PASS, f"c3 = {c3:.6g}, c4 = {c4:.6g}", None, c3), (c3, c4)


def verify_conditions(spec, plan: Optional[SamplePlan] = None) -> ConditionReport:
    """Audit ``spec`` against the hypotheses (H), (a1), (a2), (f1)-(f3), (g) and
    the growth bound ``|t|^(2+gamma) <= c3 f(t) t + c4``."""
    plan = plan or SamplePlan()
    d = spec.domain
    N = spec.dimension
    t = plan.t_samples(spec)
    xs = np.linspace(0.0, d.Lx, plan.n_x)
    ys = np.linspace(0.0, d.Ly, plan.n_x)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    zmax = plan.z_factor * spec.a.K
    z = np.linspace(-zmax, zmax, plan.n_z)

    res = {}
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        res["H"] = _check_H(spec, t)
        res["a1"] = _check_a1(spec, X, Y, z)
        res["a2"] = _check_a2(spec, X, Y, z)
        res["g"] = _check_g(spec, t, N)
        res["f1"] = _check_f1(spec, t, N)
        res["f2"] = _check_f2(spec, plan)
        res["f3"] = _check_f3(spec, t)
        res["NEWEQ1"], (c3, c4) = _check_neweq1(spec, t)
    constants = {
        "C_H": res["H"].value,
        "gamma_margin": res["f3"].value - spec.f.gamma if np.isfinite(res["f3"].value) else np.nan,
        "growth_exponent_g": res["g"].value,
        "growth_exponent_f": res["f1"].value,
        "c3": c3,
        "c4": c4,
        "a_min": res["a1"].value,
    }
    return ConditionReport(res, constants, (float(t.min()), float(t.max())), (float(-zmax), float(zmax)), N)
