"""Time integration of ``u_t + A u = f(u) + Psi(x, u, int g(u))``.

The production integrator is a first-order IMEX scheme (implicit ``A``,
explicit nonlinearity, nonlocal value frozen at the old time level).  An
independent spectral route, :func:`mild_solution_oracle`, solves the
variation-of-constants fixed point with the exact heat semigroup.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.linalg

from . import grid
from .grid import RectDomain

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("t", "l2", "h1", "energy", "ut_l2", "z", "lyap_res")

REACHED_TMAX = "reached_Tmax"
DECAYED = "decayed"
BLOWUP = "blowup_flag"
STATIONARY = "stationary"
OVERFLOW = "overflow"
SOLVER_FAILURE = "solver_failure"


class LinearSolveError(RuntimeError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(f"conjugate gradient did not converge in {iterations} iterations (residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class PicardDivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class StepperConfig:
    """Settings of the IMEX integrator.

    ``dt=None`` selects ``min(0.25 h^2, 1e-3)`` with ``h = min(hx, hy)``.  The
    step actually taken is ``dt / 2^k`` with the smallest ``k`` such that
    ``dt_k * max|f'(u)| / a0 <= nl_cap`` and ``||f(u+)|| <= growth_ratio ||f(u)||``.
    ``solver`` is ``"direct"`` (cached banded Cholesky factor of ``I + dt A``) or ``"cg"``.
    """

    dt: Optional[float] = None
    solver_tol: float = 1e-10
    max_cg_iters: int = 2000
    solver: str = "direct"
    growth_ratio: float = 10.0
    nl_cap: float = 0.25
    max_halvings: int = 40

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not (0 < self.solver_tol <= 1e-4):
            raise ValueError(f"solver_tol must lie in (0, 1e-4], got {self.solver_tol}")
        if self.solver not in ("direct", "cg"):
            raise ValueError(f"solver must be 'direct' or 'cg', got {self.solver!r}")

    def step_size(self, d: RectDomain) -> float:
        if self.dt is not None:
            return self.dt
        return min(0.25 * min(d.hx, d.hy) ** 2, 1e-3)


@dataclass
class FlowState:
    u: np.ndarray
    t: float = 0.0
    z: float = 0.0
    overflow: bool = False
    ut: Optional[np.ndarray] = None
    # cached (f(u), f'(u), F(u)) for reuse by the next step
    terms: Optional[tuple] = field(default=None, repr=False, compare=False)

    @classmethod
    def initial(cls, u0, spec) -> "FlowState":
        u = np.array(u0, dtype=float).reshape(spec.domain.shape)
        overflow = spec.overflow(u)
        return cls(u=u, t=0.0, z=spec.z(u) if not overflow else np.inf, overflow=overflow,
                   terms=spec.f.terms(u))


def conjugate_gradient(matvec, b, x0=None, tol=1e-10, maxiter=1000):
    """Plain CG for an SPD operator; stops when ``||r|| <= tol * ||b||``."""
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - matvec(x)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    p = r.copy()
    rr = np.vdot(r, r)
    for k in range(maxiter + 1):
        if np.sqrt(rr) <= tol * bnorm:
            return x, k
        if k == maxiter:
            break
        Ap = matvec(p)
        alpha = rr / np.vdot(p, Ap)
        x += alpha * p
        r -= alpha * Ap
        rr_new = np.vdot(r, r)
        p = r + (rr_new / rr) * p
        rr = rr_new
    raise LinearSolveError(maxiter, float(np.sqrt(rr) / bnorm))


@lru_cache(maxsize=64)
def _implicit_factor(d: RectDomain, dt: float):
    """Banded Cholesky factor of ``I + dt A`` (bandwidth ``ny`` in C order)."""
    M = (sp.identity(d.size) + dt * d.laplacian).todia()
    ab = np.zeros((d.ny + 1, d.size))
    for off, data in zip(M.offsets, M.data):
        if off >= 0:
            ab[d.ny - off, off:] = data[off:]
    return scipy.linalg.cholesky_banded(ab)


def solve_implicit(rhs: np.ndarray, d: RectDomain, dt: float, cfg: StepperConfig, x0=None) -> np.ndarray:
    """Solve ``(I + dt A) u = rhs``."""
    if cfg.solver == "direct":
        cb = _implicit_factor(d, dt)
        return scipy.linalg.cho_solve_banded((cb, False), rhs.ravel(), check_finite=False).reshape(d.shape)
    matvec = lambda v: v + dt * grid.laplacian_apply(v, d)  # noqa: E731
    u, _ = conjugate_gradient(matvec, rhs, x0=x0, tol=cfg.solver_tol, maxiter=cfg.max_cg_iters)
    return u


def step_imex(s: FlowState, spec, cfg: StepperConfig, dt: Optional[float] = None) -> FlowState:
    """One step of ``(I + dt A) u+ = u + dt (f(u) + Psi(x, u, z))``."""
    d = spec.domain
    dt = cfg.step_size(d) if dt is None else dt
    fu = s.terms[0] if s.terms is not None else None
    rhs = s.u + dt * spec.phi(s.u, s.z, fu)
    u_new = solve_implicit(rhs, d, dt, cfg, x0=s.u)
    overflow = s.overflow or not np.all(np.isfinite(u_new)) or spec.overflow(u_new)
    if overflow:
        return FlowState(u=u_new, t=s.t + dt, z=np.inf, overflow=True, ut=(u_new - s.u) / dt)
    return FlowState(u=u_new, t=s.t + dt, z=spec.z(u_new), overflow=False, ut=(u_new - s.u) / dt,
                     terms=spec.f.terms(u_new))


def lyapunov_residual(prev: FlowState, nxt: FlowState, spec, e_prev=None, e_next=None) -> float:
    """``|dE/dt + ||u_t||^2 - int Psi u_t|`` across one step, Psi at the midpoint."""
    d = spec.domain
    dt = nxt.t - prev.t
    ut = (nxt.u - prev.u) / dt
    if e_prev is None:
        e_prev = grid.energy(prev.u, spec)
    if e_next is None:
        e_next = grid.energy(nxt.u, spec)
    z_mid = 0.5 * (prev.z + nxt.z)
    base = (e_next - e_prev) / dt + grid.inner(ut, ut, d)
    if spec.saturated(z_mid):
        return abs(base)
    psi = spec.psi(0.5 * (prev.u + nxt.u), z_mid)
    return abs(base - grid.inner(psi, ut, d))


@dataclass(frozen=True)
class StopRules:
    """Halting predicates of :func:`evolve`.

    ``predicate`` is called after every step with the running trace and the
    current state; a non-``None`` return ``(status, trigger)`` stops the run.
    """

    t_max: float
    decay_h1: Optional[float] = None
    blow_l2: Optional[float] = None
    stationary_ut: Optional[float] = None
    max_steps: Optional[int] = None
    predicate: Optional[Callable] = None


@dataclass
class FlowTrace:
    t: np.ndarray
    l2: np.ndarray
    h1: np.ndarray
    energy: np.ndarray
    ut_l2: np.ndarray
    z: np.ndarray
    lyap_res: np.ndarray
    status: str
    final: FlowState
    trigger: Optional[str] = None
    steps: int = 0
    dt_min: float = np.nan
    snapshots: list = field(default_factory=list)

    def __len__(self):
        return len(self.t)

    def rows(self):
        return np.column_stack([getattr(self, c) for c in TRACE_COLUMNS])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for row in self.rows():
                w.writerow([repr(float(v)) for v in row])


class _Recorder:
    def __init__(self):
        for c in TRACE_COLUMNS:
            setattr(self, c, [])

    def add(self, **vals):
        for c in TRACE_COLUMNS:
            getattr(self, c).append(float(vals[c]))


def _energy(state: FlowState, spec) -> float:
    if state.overflow:
        return -np.inf
    d = spec.domain
    return 0.5 * grid.norm_h1(state.u, d) ** 2 - grid.integrate(state.terms[2], d)


def _rhs_norm(fu, d):
    return grid.norm_l2(fu, d)


def evolve(
    u0,
    spec,
    cfg: StepperConfig,
    stop: StopRules,
    stride: int = 1,
    snapshot_stride: int = 0,
    observer: Optional[Callable] = None,
) -> FlowTrace:
    """Advance the IMEX scheme from ``u0`` until a stop rule fires.

    Diagnostics are computed every step; a trace row is stored every ``stride``
    steps (and always for the last step).  ``observer(state, row)`` sees every
    accepted step.
    """
    d = spec.domain
    dt0 = cfg.step_size(d)
    inv_a0 = max(1.0, 1.0 / spec.a.a0)
    state = FlowState.initial(u0, spec)
    rec = _Recorder()
    snaps = []

    e = _energy(state, spec)
    rhs0 = spec.phi(state.u, state.z, state.terms[0]) - grid.laplacian_apply(state.u, d)
    row = dict(t=0.0, l2=grid.norm_l2(state.u, d), h1=grid.norm_h1(state.u, d), energy=e,
               ut_l2=grid.norm_l2(rhs0, d), z=state.z, lyap_res=0.0)
    rec.add(**row)
    if snapshot_stride:
        snaps.append((0.0, state.u.copy()))
    if observer is not None:
        observer(state, row)

    status, trigger = _check(stop, state, row, rec)
    steps = 0
    dt_min = np.inf
    fnorm = _rhs_norm(state.terms[0], d)
    while status is None:
        dt = dt0
        lip = float(np.max(np.abs(state.terms[1]))) * inv_a0
        halvings = 0
        while dt * lip > cfg.nl_cap and halvings < cfg.max_halvings:
            dt *= 0.5
            halvings += 1
        try:
            while True:
                nxt = step_imex(state, spec, cfg, dt)
                if nxt.overflow:
                    break
                fnorm_new = _rhs_norm(nxt.terms[0], d)
                if fnorm > 0 and fnorm_new > cfg.growth_ratio * fnorm and halvings < cfg.max_halvings:
                    dt *= 0.5
                    halvings += 1
                    continue
                break
        except LinearSolveError as exc:
            logger.warning("linear solve failed at t=%g: %s", state.t, exc)
            status, trigger = SOLVER_FAILURE, "linear_solve"
            break
        steps += 1
        dt_min = min(dt_min, dt)
        if nxt.overflow:
            state = nxt
            status, trigger = OVERFLOW, "overflow"
            rec.add(t=nxt.t, l2=np.inf, h1=np.inf, energy=-np.inf, ut_l2=np.inf, z=np.inf, lyap_res=np.nan)
            break
        fnorm = fnorm_new
        e_new = _energy(nxt, spec)
        row = dict(
            t=nxt.t,
            l2=grid.norm_l2(nxt.u, d),
            h1=grid.norm_h1(nxt.u, d),
            energy=e_new,
            ut_l2=grid.norm_l2(nxt.ut, d),
            z=nxt.z,
            lyap_res=lyapunov_residual(state, nxt, spec, e, e_new),
        )
        state, e = nxt, e_new
        if observer is not None:
            observer(state, row)
        status, trigger = _check(stop, state, row, rec)
        if status is not None or steps % stride == 0:
            rec.add(**row)
        if snapshot_stride and steps % snapshot_stride == 0:
            snaps.append((state.t, state.u.copy()))
        if status is None:
            status, trigger = _check_predicate(stop, state, rec)

    arrays = {c: np.array(getattr(rec, c)) for c in TRACE_COLUMNS}
    return FlowTrace(**arrays, status=status, final=state, trigger=trigger, steps=steps,
                     dt_min=float(dt_min), snapshots=snaps)


def _check(stop: StopRules, state: FlowState, row, rec):
    if state.overflow:
        return OVERFLOW, "overflow"
    if stop.blow_l2 is not None and row["l2"] >= stop.blow_l2:
        return BLOWUP, "norm_threshold"
    if stop.decay_h1 is not None and row["h1"] <= stop.decay_h1:
        return DECAYED, "norm_threshold"
    if stop.stationary_ut is not None and state.t > 0 and row["ut_l2"] <= stop.stationary_ut:
        return STATIONARY, "ut_threshold"
    if state.t >= stop.t_max * (1 - 1e-12):
        return REACHED_TMAX, "t_max"
    if stop.max_steps is not None and len(rec.t) > stop.max_steps:
        return REACHED_TMAX, "max_steps"
    return None, None


def _check_predicate(stop: StopRules, state, rec):
    if stop.predicate is None:
        return None, None
    out = stop.predicate(rec, state)
    return (None, None) if out is None else out


# spectral mild-solution oracle


def _duhamel_weights(lam: np.ndarray, h: float):
    """Weights ``(W_old, W_new)`` of ``int_0^h e^{-lam s} phi(t - s) ds`` for linear ``phi``.

    ``W_old`` multiplies the value at the start of the sub-interval, ``W_new`` the
    value at its end.
    """
    x = lam * h
    small = x < 1e-4
    xs = np.where(small, 1.0, x)
    e1 = np.where(small, 1.0 - x / 2 + x * x / 6, -np.expm1(-xs) / xs)
    w_old = np.where(small, 0.5 - x / 3 + x * x / 8, (1.0 - np.exp(-xs) * (1.0 + xs)) / xs**2)
    return h * w_old, h * (e1 - w_old)


def mild_solution_oracle(u0, spec, t_end: float, n_sub: int = 64, tol: float = 1e-8,
                         max_iter: int = 50, return_trajectory: bool = False):
    """Picard iteration of ``G(u)(t) = e^{-At} u0 + int_0^t e^{-A(t-s)} Phi(u(s)) ds``.

    The semigroup is applied exactly in the sine eigenbasis; the Duhamel integral
    uses the trapezoidal product rule (``Phi`` linear between the ``n_sub + 1``
    time nodes, exponential integrated exactly).  Iterates are compared in the
    sup over nodes of the L2 distance.
    """
    if n_sub < 16:
        raise ValueError("n_sub must be at least 16")
    d = spec.domain
    u0 = np.array(u0, dtype=float).reshape(d.shape)
    if t_end == 0:
        return (u0.copy(), np.array([0.0]), u0[None].copy()) if return_trajectory else u0.copy()
    basis = grid.spectral_basis(d)
    lam = basis.grid_eigenvalues
    h = t_end / n_sub
    times = h * np.arange(n_sub + 1)
    decay = np.exp(-lam * h)
    w_old, w_new = _duhamel_weights(lam, h)
    c0 = basis.coefficients(u0)

    coeffs = np.exp(-lam[None] * times[:, None, None]) * c0[None]
    U = np.array([basis.synthesize(c) for c in coeffs])
    prev_diff = np.inf
    growth = 0
    for it in range(1, max_iter + 1):
        phi = np.array([basis.coefficients(spec.phi(u)) for u in U])
        new = np.empty_like(coeffs)
        new[0] = c0
        for i in range(n_sub):
            new[i + 1] = decay * new[i] + w_old * phi[i] + w_new * phi[i + 1]
        U_new = np.array([basis.synthesize(c) for c in new])
        diff = max(grid.norm_l2(a - b, d) for a, b in zip(U_new, U))
        U, coeffs = U_new, new
        if not np.isfinite(diff):
            raise PicardDivergenceError("Picard iterates became non-finite; reduce t_end")
        if diff < tol:
            logger.debug("Picard converged in %d iterations (diff %.2e)", it, diff)
            break
        growth = growth + 1 if diff > prev_diff else 0
        if growth >= 3:
            raise PicardDivergenceError(
                f"Picard iterates are not contracting (diff {diff:.3e} after {it} iterations); reduce t_end"
            )
        prev_diff = diff
    if return_trajectory:
        return U[-1], times, U
    return U[-1]
