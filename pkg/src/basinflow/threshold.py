"""Basin-boundary search along a ray and refinement to a stationary solution.

The pipeline is: bracket the ray ``s -> s v`` between a decaying and a blowing-up
initial datum, bisect to the boundary, follow the two near-threshold
trajectories to their slowest point, and polish that snapshot with Newton's
method on ``A u - f(u) - Psi(x, u, int g(u)) = 0``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, onenormest, splu

from . import classify, flow, grid
from .classify import BLOWUP, DECAY, UNDECIDED, Classification, ClassifierConfig
from .flow import StepperConfig, StopRules

logger = logging.getLogger(__name__)


class BracketError(RuntimeError):
    pass


class OmegaLimitError(RuntimeError):
    pass


class SingularJacobianError(ArithmeticError):
    def __init__(self, condition: float):
        super().__init__(f"Jacobian is numerically singular (condition estimate {condition:.3e})")
        self.condition = condition


class RefinementError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class ThresholdConfig:
    """Tolerances of the ray search and the refinement.

    ``tol_s`` is the absolute width at which bisection stops.  ``plateau_tol``
    bounds ``||u_t||_L2`` for a snapshot to count as quasi-stationary and
    ``cauchy_tol`` bounds the H1 distance between the two sides' snapshots.
    ``eps_nontrivial=None`` means ``10 * eps_decay`` of the classifier.
    """

    tol_s: float = 1e-4
    max_iters: int = 60
    s_cap: float = 2.0**20
    s_floor: float = 2.0**-40
    plateau_tol: float = 1e-4
    cauchy_tol: float = 1e-3
    eps_nontrivial: Optional[float] = None
    newton_tol: float = 1e-10
    newton_max_iters: int = 30
    picard_max_iters: int = 50
    cond_max: float = 1e12

    def __post_init__(self):
        if not self.tol_s > 0:
            raise ValueError("tol_s must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not (0 < self.s_floor < 1 < self.s_cap):
            raise ValueError("need 0 < s_floor < 1 < s_cap")


def default_direction(d: grid.RectDomain) -> np.ndarray:
    """First eigenmode scaled to unit H1 norm."""
    v = grid.eigenmode(d)
    return v / grid.norm_h1(v, d)


def _eps_nontrivial(u, spec, ccfg: ClassifierConfig, tcfg: ThresholdConfig) -> float:
    if tcfg.eps_nontrivial is not None:
        return tcfg.eps_nontrivial
    return 10.0 * ccfg.decay_threshold(grid.norm_h1(u, spec.domain))


# midpoint resolution with the escalation policy


@dataclass
class Probe:
    s: float
    verdict: str
    classification: Classification
    escalation: str = "none"


def resolve(u0, spec, ccfg: ClassifierConfig, scfg: StepperConfig):
    """Classify ``u0``; an Undecided verdict is retried with ``T_max * 4``, then
    ``dt / 4``, and finally decided by the sign of the last recorded energy.

    Returns ``(verdict, classification, escalation)`` with verdict Decay or BlowUp.
    """
    c = classify.classify_trajectory(u0, spec, ccfg, scfg)
    if c.verdict != UNDECIDED:
        return c.verdict, c, "none"
    ccfg = replace(ccfg, T_max=4.0 * ccfg.T_max)
    c = classify.classify_trajectory(u0, spec, ccfg, scfg)
    if c.verdict != UNDECIDED:
        return c.verdict, c, "t_max"
    scfg = replace(scfg, dt=0.25 * scfg.step_size(spec.domain))
    c = classify.classify_trajectory(u0, spec, ccfg, scfg)
    if c.verdict != UNDECIDED:
        return c.verdict, c, "dt"
    e = c.trace.energy[np.isfinite(c.trace.energy)]
    verdict = BLOWUP if len(e) and e[-1] < 0 else DECAY
    logger.warning("persistent Undecided verdict resolved by energy sign as %s", verdict)
    return verdict, c, "energy_sign"


def _ray_resolver(v, spec, ccfg, scfg, history):
    v = np.asarray(v, dtype=float).reshape(spec.domain.shape)

    def fn(s):
        verdict, c, esc = resolve(s * v, spec, ccfg, scfg)
        history.append(Probe(float(s), verdict, c, esc))
        logger.info("s=%.10g -> %s (%s)", s, verdict, c.trigger)
        return verdict

    return fn


def bracket_ray(v, spec, ccfg: ClassifierConfig = ClassifierConfig(), scfg: StepperConfig = StepperConfig(),
                tcfg: ThresholdConfig = ThresholdConfig(), history: Optional[list] = None):
    """Geometric search from ``s = 1`` (doubling up, halving down) for a
    Decay/BlowUp pair on the ray ``s v``.  Returns ``(s_low, s_high)``."""
    if not np.any(v):
        raise ValueError("ray direction must be nonzero")
    history = [] if history is None else history
    fn = _ray_resolver(v, spec, ccfg, scfg, history)
    s = 1.0
    if fn(s) == DECAY:
        while True:
            if 2.0 * s > tcfg.s_cap:
                raise BracketError(f"no upper bracket: all data decay up to s = {s:g}")
            if fn(2.0 * s) == BLOWUP:
                return s, 2.0 * s
            s *= 2.0
    while True:
        if 0.5 * s < tcfg.s_floor:
            raise BracketError(f"no lower bracket: all data blow up down to s = {s:g}")
        if fn(0.5 * s) == DECAY:
            return 0.5 * s, s
        s *= 0.5


@dataclass
class ThresholdResult:
    s_star: float
    s_low: float
    s_high: float
    bracket_history: list
    iterations: int
    inconclusive: bool = False
    decay: Optional[Probe] = field(default=None, repr=False)
    blowup: Optional[Probe] = field(default=None, repr=False)
    probes: list = field(default_factory=list, repr=False)

    @property
    def width(self) -> float:
        return self.s_high - self.s_low

    @property
    def decay_trace(self):
        return None if self.decay is None else self.decay.classification.trace

    @property
    def blowup_trace(self):
        return None if self.blowup is None else self.blowup.classification.trace


def bisect_scalar(fn: Callable[[float], str], lo: float, hi: float, tol: float, max_iters: int = 60):
    """Bisection on a two-valued map with ``fn(lo) = Decay`` and ``fn(hi) = BlowUp``.

    Returns ``(lo, hi, history, iterations)``; ``history`` lists the brackets.
    """
    if not lo < hi:
        raise ValueError("need lo < hi")
    history = [(lo, hi)]
    it = 0
    while hi - lo > tol and it < max_iters:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if fn(mid) == DECAY:
            lo = mid
        else:
            hi = mid
        it += 1
        history.append((lo, hi))
    return lo, hi, history, it


def bisect(v, bracket, spec, ccfg: ClassifierConfig = ClassifierConfig(), scfg: StepperConfig = StepperConfig(),
           tcfg: ThresholdConfig = ThresholdConfig(), probes: Optional[list] = None) -> ThresholdResult:
    """Bisect the bracket ``(s_low, s_high)`` down to width ``tol_s``."""
    s_low, s_high = bracket
    if not 0 <= s_low < s_high:
        raise ValueError("need 0 <= s_low < s_high")
    probes = [] if probes is None else probes
    fn = _ray_resolver(v, spec, ccfg, scfg, probes)
    lo, hi, history, it = bisect_scalar(fn, s_low, s_high, tcfg.tol_s, tcfg.max_iters)

    def endpoint(s, verdict):
        for p in reversed(probes):
            if p.s == s and p.verdict == verdict:
                return p
        verdict_, c, esc = resolve(s * np.asarray(v, dtype=float), spec, ccfg, scfg)
        p = Probe(s, verdict_, c, esc)
        probes.append(p)
        return p

    dec, blo = endpoint(lo, DECAY), endpoint(hi, BLOWUP)
    inconclusive = any(p.escalation == "energy_sign" for p in probes)
    inconclusive |= dec.verdict != DECAY or blo.verdict != BLOWUP or hi - lo > tcfg.tol_s
    return ThresholdResult(0.5 * (lo + hi), lo, hi, history, it, inconclusive, dec, blo, probes)


# omega-limit extraction


@dataclass
class Snapshot:
    u: np.ndarray
    t: float
    ut_l2: float
    h1: float
    side: str


@dataclass
class OmegaCandidate:
    u: np.ndarray
    t: float
    ut_l2: float
    h1: float
    side: str
    cauchy_distance: float
    snapshots: list = field(default_factory=list, repr=False)


class _SlowestSnapshot:
    """Observer keeping the state with the smallest ``||u_t||_L2 / ||u||_H1``
    among those with H1 norm above a floor.

    The ratio (rather than ``||u_t||`` itself) keeps a decaying tail, where both
    norms shrink together, from passing for a plateau.
    """

    def __init__(self, floor: float, side: str):
        self.floor = floor
        self.side = side
        self.best: Optional[Snapshot] = None

    def __call__(self, state, row):
        if row["h1"] <= self.floor or not np.isfinite(row["ut_l2"]) or state.t == 0:
            return
        rel = row["ut_l2"] / row["h1"]
        if self.best is None or rel < self.best.ut_l2 / self.best.h1:
            self.best = Snapshot(state.u.copy(), state.t, row["ut_l2"], row["h1"], self.side)


def extract_omega_limit(v, result: ThresholdResult, spec, ccfg: ClassifierConfig = ClassifierConfig(),
                        scfg: StepperConfig = StepperConfig(),
                        tcfg: ThresholdConfig = ThresholdConfig()) -> OmegaCandidate:
    """Follow both final bracket endpoints and return the slowest nontrivial snapshot.

    The snapshot counts only when ``||u_t||_L2 <= plateau_tol``.  The two sides'
    slowest snapshots must lie within ``cauchy_tol`` of each other in H1 when
    both reach the plateau.
    """
    if result.inconclusive:
        raise OmegaLimitError("threshold result is inconclusive; cannot extract an omega-limit")
    v = np.asarray(v, dtype=float).reshape(spec.domain.shape)
    snaps = []
    for side, s in (("decay", result.s_low), ("blowup", result.s_high)):
        u0 = s * v
        floor = _eps_nontrivial(u0, spec, ccfg, tcfg)
        obs = _SlowestSnapshot(floor, side)
        h1_0 = grid.norm_h1(u0, spec.domain)
        stop = StopRules(t_max=ccfg.T_max, decay_h1=ccfg.decay_threshold(h1_0), blow_l2=ccfg.M_blow)
        flow.evolve(u0, spec, scfg, stop, observer=obs)
        if obs.best is not None:
            snaps.append(obs.best)
    plateau = [sn for sn in snaps if sn.ut_l2 <= tcfg.plateau_tol]
    if not plateau:
        best = min((sn.ut_l2 for sn in snaps), default=np.inf)
        raise OmegaLimitError(f"omega-limit not captured; tighten tol_s (slowest ||u_t|| = {best:.3e})")
    best = min(plateau, key=lambda sn: sn.ut_l2 / sn.h1)
    dist = np.nan
    if len(plateau) == 2:
        dist = grid.norm_h1(plateau[0].u - plateau[1].u, spec.domain)
        if dist > tcfg.cauchy_tol:
            logger.warning("plateau snapshots differ by %.3e in H1 (> %.1e)", dist, tcfg.cauchy_tol)
    return OmegaCandidate(best.u, best.t, best.ut_l2, best.h1, best.side, float(dist), snaps)


# residuals and Newton refinement


def stationary_residual(u, spec) -> np.ndarray:
    """``A u - f(u) - Psi(x, u, int g(u))``, the residual of the rewritten problem."""
    d = spec.domain
    u = np.asarray(u, dtype=float).reshape(d.shape)
    return grid.laplacian_apply(u, d) - spec.phi(u)


def residual(u, spec, form: str = "P") -> float:
    """L2 norm of the steady-state residual.

    ``form="P"``: ``a(x, z) A u - f(u)``.  ``form="P'"``: ``a(x, z) (A u - f(u) - Psi)``,
    the rewritten residual weighted pointwise by ``a`` so both forms measure the
    same quantity.
    """
    d = spec.domain
    u = np.asarray(u, dtype=float).reshape(d.shape)
    z = spec.z(u)
    a = spec.a_grid(z)
    if form == "P":
        r = a * grid.laplacian_apply(u, d) - spec.f.f(u)
    elif form == "P'":
        r = a * stationary_residual(u, spec)
    else:
        raise ValueError(f"form must be 'P' or \"P'\", got {form!r}")
    return grid.norm_l2(r, d)


@dataclass
class SteadyState:
    u: np.ndarray
    residual_l2: float
    energy: float
    z: float
    h1: float
    iterations: int
    method: str
    s_star: float = np.nan

    def summary(self) -> dict:
        return {
            "s_star": float(self.s_star),
            "residual_l2": float(self.residual_l2),
            "energy": float(self.energy),
            "z_s": float(self.z),
            "h1_norm": float(self.h1),
            "iterations": int(self.iterations),
            "method": self.method,
        }


def _local_jacobian(u, spec, z):
    """``A - diag(f'(u) / a(x, z))`` as a sparse matrix."""
    a = spec.a_grid(z)
    return (spec.domain.laplacian - sp.diags((spec.f.df(u) / a).ravel())).tocsc()


def _factor(M):
    try:
        lu = splu(M)
    except RuntimeError as exc:
        raise SingularJacobianError(np.inf) from exc
    n = M.shape[0]
    inv = LinearOperator((n, n), matvec=lu.solve, rmatvec=lambda x: lu.solve(x, trans="T"), dtype=float)
    cond = onenormest(M) * onenormest(inv)
    return lu, cond


def _newton_direction(u, spec, cond_max, frozen: bool):
    """Solve ``J du = -R``; ``J`` carries the rank-one nonlocal term unless ``frozen``."""
    d = spec.domain
    z = spec.z(u)
    M = _local_jacobian(u, spec, z)
    lu, cond = _factor(M)
    if not np.isfinite(cond) or cond > cond_max:
        raise SingularJacobianError(cond)
    if frozen:
        R = grid.laplacian_apply(u, d) - spec.phi(u, z)
    else:
        R = stationary_residual(u, spec)
    rhs = -R.ravel()
    x = lu.solve(rhs)
    if frozen or spec.saturated(z):
        return x.reshape(d.shape)
    # d/dz of -f(u)/a(x, z) is f(u) a_z / a^2, times dz/du_j = g'(u_j) hx hy
    a = spec.a_grid(z)
    c = (spec.f.f(u) * spec.B_grid * float(spec.a.dh(z)) / a**2).ravel()
    w = (spec.g.dg(u) * d.cell).ravel()
    y = lu.solve(c)
    denom = 1.0 + w @ y
    if abs(denom) < 1e-14:
        raise SingularJacobianError(np.inf)
    return (x - y * (w @ x) / denom).reshape(d.shape)


def newton_refine(u, spec, tol: float = 1e-10, eps_nontrivial: float = 1e-5, max_iters: int = 30,
                  picard_max_iters: int = 50, cond_max: float = 1e12) -> SteadyState:
    """Damped Newton on ``A u - f(u) - Psi(x, u, int g(u)) = 0``.

    If Newton stalls, an outer frozen-``z`` iteration is tried: Newton on the
    local problem with ``z`` fixed, then ``z`` updated from the new iterate.
    """
    d = spec.domain
    u = np.array(u, dtype=float).reshape(d.shape)
    if grid.norm_h1(u, d) < eps_nontrivial:
        raise ValueError(f"refusing near-trivial input (||u||_H1 < {eps_nontrivial:g})")
    u0 = u.copy()
    res = grid.norm_l2(stationary_residual(u, spec), d)
    it = 0
    while res > tol and it < max_iters:
        du = _newton_direction(u, spec, cond_max, frozen=False)
        lam = 1.0
        while lam > 1e-4:
            w = u + lam * du
            rw = grid.norm_l2(stationary_residual(w, spec), d)
            if np.isfinite(rw) and rw < res:
                break
            lam *= 0.5
        else:
            break
        u, res = w, rw
        it += 1
        logger.debug("newton %d: residual %.3e (step %.3g)", it, res, lam)
    if res <= tol:
        return _steady(u, spec, res, it, "newton", eps_nontrivial)

    logger.info("Newton stalled at residual %.3e; trying frozen-z iteration", res)
    u = u0.copy()
    res_p = grid.norm_l2(stationary_residual(u, spec), d)
    for k in range(1, picard_max_iters + 1):
        z = spec.z(u)
        frozen = spec.with_()
        for _ in range(max_iters):
            r = grid.laplacian_apply(u, d) - frozen.phi(u, z)
            if grid.norm_l2(r, d) <= 0.1 * tol:
                break
            M = _local_jacobian(u, spec, z)
            lu, cond = _factor(M)
            if not np.isfinite(cond) or cond > cond_max:
                raise SingularJacobianError(cond)
            u = u - lu.solve(r.ravel()).reshape(d.shape)
        res_p = grid.norm_l2(stationary_residual(u, spec), d)
        if not np.isfinite(res_p):
            break
        if res_p <= tol:
            return _steady(u, spec, res_p, it + k, "picard", eps_nontrivial)
    raise RefinementError("Newton and frozen-z iteration both failed", min(res, res_p))


def _steady(u, spec, res, iterations, method, eps_nontrivial):
    d = spec.domain
    h1 = grid.norm_h1(u, d)
    if h1 <= eps_nontrivial:
        raise RefinementError("refinement converged to the trivial solution", res)
    return SteadyState(u, res, grid.energy(u, spec), spec.z(u), h1, iterations, method)


# full pipeline


@dataclass
class PipelineResult:
    bracket: tuple
    threshold: ThresholdResult
    candidate: OmegaCandidate
    steady: SteadyState


def find_steady_state(spec, v=None, ccfg: ClassifierConfig = ClassifierConfig(),
                      scfg: StepperConfig = StepperConfig(),
                      tcfg: ThresholdConfig = ThresholdConfig()) -> PipelineResult:
    """Bracket, bisect, extract and refine along the ray ``s v`` (default first eigenmode)."""
    d = spec.domain
    v = default_direction(d) if v is None else np.asarray(v, dtype=float).reshape(d.shape)
    probes: list = []
    bracket = bracket_ray(v, spec, ccfg, scfg, tcfg, history=probes)
    result = bisect(v, bracket, spec, ccfg, scfg, tcfg, probes=probes)
    if result.inconclusive:
        raise BracketError("bisection inconclusive: Undecided verdicts persisted after escalation")
    cand = extract_omega_limit(v, result, spec, ccfg, scfg, tcfg)
    eps = _eps_nontrivial(result.s_low * v, spec, ccfg, tcfg)
    steady = newton_refine(cand.u, spec, tcfg.newton_tol, eps, tcfg.newton_max_iters,
                           tcfg.picard_max_iters, tcfg.cond_max)
    steady.s_star = result.s_star
    return PipelineResult(bracket, result, cand, steady)
