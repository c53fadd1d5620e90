"""Nonlinearities ``f``, ``F``, ``g``, the nonlocal coefficient ``a`` and the term Psi.

The elliptic problem ``-a(x, int g(u)) Lap u = f(u)`` is handled in the rewritten
form ``-Lap u = f(u) + Psi(x, u, int g(u))`` with
``Psi(x, t, z) = (1/a(x, z) - 1) f(t)``.  All evaluators accept scalars or numpy
arrays and are pure.

Exponentials are evaluated with the exponent clamped at ``EXP_CLAMP`` so that a
runaway trajectory produces large finite numbers instead of ``inf``; the
``overflow`` methods report whether the clamp was hit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy import integrate as sci_integrate

from .grid import RectDomain
from . import grid

EXP_CLAMP = 700.0

ArrayFn = Callable[[np.ndarray], np.ndarray]

# Gauss-Legendre nodes on [0, 1] for vectorized primitives F(t) = int_0^t f
_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


class QuadratureError(ArithmeticError):
    def __init__(self, requested: float, achieved: float):
        super().__init__(f"quadrature did not reach tolerance {requested:g} (estimated error {achieved:g})")
        self.requested = requested
        self.achieved = achieved


def _clamped_exp(e):
    return np.exp(np.minimum(e, EXP_CLAMP))


def _signed_power(t, p):
    """``|t|^(p-1) t``, i.e. the odd extension of ``t^p``."""
    return np.abs(t) ** (p - 1.0) * t


@dataclass(frozen=True)
class NonlinearityModel:
    """The reaction term ``f`` and its primitive ``F``.

    kind ``"polynomial"``: ``f(t) = |t|^(p-1) t + |t|^(r-1) t``; with ``r=None``
    only the first term is kept.
    kind ``"exponential"``: ``f(t) = |t|^(p-2) t exp(|t|^tau)``.
    kind ``"linear"``: ``f(t) = c t`` with ``c = p`` (a test violator and the
    linear-flow case ``c = 0``).
    kind ``"custom"``: user callables ``func``, ``dfunc`` and optionally ``prim``.

    ``gamma`` is the Ambrosetti-Rabinowitz constant claimed for the model.
    """

    kind: str = "polynomial"
    p: float = 1.4
    r: Optional[float] = 1.2
    tau: Optional[float] = None
    gamma: float = 0.2
    F_mode: str = "closed"
    func: Optional[ArrayFn] = field(default=None, compare=False)
    dfunc: Optional[ArrayFn] = field(default=None, compare=False)
    prim: Optional[ArrayFn] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.kind == "polynomial":
            if not (self.p > 1 and (self.r is None or self.r > 1)):
                raise ValueError(f"polynomial nonlinearity needs p > 1 and r > 1, got p={self.p}, r={self.r}")
        elif self.kind == "exponential":
            if self.tau is None or not (0.5 < self.tau < 1.0):
                raise ValueError(f"exponential nonlinearity needs 1 < 2 tau < 2, got tau={self.tau}")
            if not self.p > 2:
                raise ValueError(f"exponential nonlinearity needs p > 2, got p={self.p}")
        elif self.kind == "linear":
            pass
        elif self.kind == "custom":
            if self.func is None:
                raise ValueError("custom nonlinearity needs func")
        else:
            raise ValueError(f"unknown nonlinearity kind {self.kind!r}")
        if self.F_mode not in ("closed", "quadrature"):
            raise ValueError(f"F_mode must be 'closed' or 'quadrature', got {self.F_mode!r}")

    def f(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "polynomial":
            if self.r is None:
                return _signed_power(t, self.p)
            return _signed_power(t, self.p) + _signed_power(t, self.r)
        if self.kind == "exponential":
            return np.abs(t) ** (self.p - 2.0) * t * _clamped_exp(np.abs(t) ** self.tau)
        if self.kind == "linear":
            return self.p * t
        return np.asarray(self.func(t), dtype=float)

    def df(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "polynomial":
            a = np.abs(t)
            if self.r is None:
                return self.p * a ** (self.p - 1.0)
            return self.p * a ** (self.p - 1.0) + self.r * a ** (self.r - 1.0)
        if self.kind == "exponential":
            a = np.abs(t)
            return _clamped_exp(a**self.tau) * (
                (self.p - 1.0) * a ** (self.p - 2.0) + self.tau * a ** (self.p - 2.0 + self.tau)
            )
        if self.kind == "linear":
            return np.full_like(t, float(self.p))
        if self.dfunc is not None:
            return np.asarray(self.dfunc(t), dtype=float)
        eps = 1e-6 * np.maximum(1.0, np.abs(t))
        return (self.f(t + eps) - self.f(t - eps)) / (2.0 * eps)

    def F(self, t):
        """Primitive ``int_0^t f``; closed form where available, else 64-point Gauss-Legendre."""
        t = np.asarray(t, dtype=float)
        if self.F_mode == "closed":
            if self.kind == "polynomial":
                a = np.abs(t)
                if self.r is None:
                    return a ** (self.p + 1.0) / (self.p + 1.0)
                return a ** (self.p + 1.0) / (self.p + 1.0) + a ** (self.r + 1.0) / (self.r + 1.0)
            if self.kind == "linear":
                return 0.5 * self.p * t * t
            if self.kind == "custom" and self.prim is not None:
                return np.asarray(self.prim(t), dtype=float)
        nodes = t[..., None] * _GL_X
        return t * (self.f(nodes) @ _GL_W)

    def terms(self, t):
        """``(f(t), f'(t), F(t))`` sharing the power evaluations where possible."""
        t = np.asarray(t, dtype=float)
        if self.kind == "polynomial" and self.F_mode == "closed":
            a = np.abs(t)
            ap = a ** (self.p - 1.0)
            if self.r is None:
                return ap * t, self.p * ap, a * a * ap / (self.p + 1.0)
            ar = ap if self.r == self.p else a ** (self.r - 1.0)
            a2 = a * a
            return (ap + ar) * t, self.p * ap + self.r * ar, a2 * (ap / (self.p + 1.0) + ar / (self.r + 1.0))
        return self.f(t), self.df(t), self.F(t)

    def overflow(self, t) -> bool:
        if self.kind != "exponential":
            return not bool(np.all(np.isfinite(self.f(t))))
        return bool(np.any(np.abs(np.asarray(t, dtype=float)) ** self.tau > EXP_CLAMP))


@dataclass(frozen=True)
class NonlocalModel:
    """The density ``g`` inside the nonlocal argument ``z = int g(u)``.

    kind ``"power"``: ``|t|^q``; ``"exponential"``: ``exp(|t|^xi)``;
    ``"constant"``: ``g = q`` (used to build violators); ``"custom"``: callables.
    """

    kind: str = "power"
    q: float = 3.0
    xi: Optional[float] = None
    func: Optional[ArrayFn] = field(default=None, compare=False)
    dfunc: Optional[ArrayFn] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind == "power":
            if not self.q >= 1:
                raise ValueError(f"power density needs q >= 1, got q={self.q}")
        elif self.kind == "exponential":
            if self.xi is None or not (0 < self.xi < 2):
                raise ValueError(f"exponential density needs 0 < xi < 2, got xi={self.xi}")
        elif self.kind == "constant":
            pass
        elif self.kind == "custom":
            if self.func is None:
                raise ValueError("custom density needs func")
        else:
            raise ValueError(f"unknown density kind {self.kind!r}")

    def g(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "power":
            return np.abs(t) ** self.q
        if self.kind == "exponential":
            return _clamped_exp(np.abs(t) ** self.xi)
        if self.kind == "constant":
            return np.full_like(t, float(self.q))
        return np.asarray(self.func(t), dtype=float)

    def dg(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "power":
            return self.q * np.abs(t) ** (self.q - 1.0) * np.sign(t)
        if self.kind == "exponential":
            a = np.abs(t)
            return self.xi * a ** (self.xi - 1.0) * np.sign(t) * _clamped_exp(a**self.xi)
        if self.kind == "constant":
            return np.zeros_like(t)
        if self.dfunc is not None:
            return np.asarray(self.dfunc(t), dtype=float)
        eps = 1e-6 * np.maximum(1.0, np.abs(t))
        return (self.g(t + eps) - self.g(t - eps)) / (2.0 * eps)

    def overflow(self, t) -> bool:
        if self.kind != "exponential":
            return False
        return bool(np.any(np.abs(np.asarray(t, dtype=float)) ** self.xi > EXP_CLAMP))


# cutoff profiles h(z) and their derivatives; all vanish for |z| >= K except "gauss"
def _bump(c, K):
    def h(z):
        z = np.asarray(z, dtype=float)
        s = 1.0 - (z / K) ** 2
        return np.where(np.abs(z) < K, c * s * s, 0.0)

    def dh(z):
        z = np.asarray(z, dtype=float)
        s = 1.0 - (z / K) ** 2
        return np.where(np.abs(z) < K, -4.0 * c * z * s / K**2, 0.0)

    return h, dh


def _hat(c, K):
    def h(z):
        z = np.asarray(z, dtype=float)
        return np.where(np.abs(z) < K, c * (1.0 - np.abs(z) / K), 0.0)

    def dh(z):
        z = np.asarray(z, dtype=float)
        return np.where(np.abs(z) < K, -c * np.sign(z) / K, 0.0)

    return h, dh


def _gauss(c, K):
    def h(z):
        return c * np.exp(-((np.asarray(z, dtype=float) / K) ** 2))

    def dh(z):
        z = np.asarray(z, dtype=float)
        return -2.0 * c * z / K**2 * np.exp(-((z / K) ** 2))

    return h, dh


H_PROFILES = {"bump": _bump, "hat": _hat, "gauss": _gauss}


def _b_profile(name: str, Lx: float, Ly: float):
    if name == "sinsin":
        return lambda x, y: np.sin(np.pi * np.asarray(x) / Lx) * np.sin(np.pi * np.asarray(y) / Ly)
    if name == "one":
        return lambda x, y: np.ones(np.broadcast(np.asarray(x), np.asarray(y)).shape)
    if name == "zero":
        return lambda x, y: np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)
    raise ValueError(f"unknown B profile {name!r}")


B_PROFILES = ("sinsin", "one", "zero")


@dataclass(frozen=True)
class CoefficientModel:
    """``a(x, z) = 1 + B(x) h(z)`` with ``h(z) = 0`` for ``|z| >= K`` (for saturating profiles).

    ``B`` takes node coordinates ``(x, y)``; ``h``/``dh`` take the nonlocal value.
    ``a0`` is the claimed lower bound of ``a``; ``floor`` is the sampled infimum of
    ``B h`` (filled in by :func:`coefficient`).
    """

    a0: float
    K: float
    B: Callable = field(compare=False)
    h: ArrayFn = field(compare=False)
    dh: ArrayFn = field(compare=False)
    floor: float = 0.0
    B_id: str = "custom"
    h_id: str = "custom"
    amplitude: float = 0.0

    def __post_init__(self):
        if not self.K > 0:
            raise ValueError(f"K must be positive, got {self.K}")
        if not self.a0 > 0:
            raise ValueError(f"a0 must be positive, got {self.a0}")
        if not self.floor > -1:
            raise ValueError(f"inf B h must exceed -1, got {self.floor}")

    def a(self, x, y, z):
        return 1.0 + self.B(x, y) * self.h(z)

    def da_dz(self, x, y, z):
        return self.B(x, y) * self.dh(z)

    @property
    def trivial(self) -> bool:
        return self.B_id == "zero" or self.amplitude == 0.0


def coefficient(
    domain: RectDomain,
    K: float = 1.0,
    B: str = "sinsin",
    h: str = "bump",
    amplitude: float = 0.5,
    a0: Optional[float] = None,
) -> CoefficientModel:
    """Build ``a = 1 + B h`` from named profiles; ``a0`` defaults to ``1 + min(0, inf B h)``."""
    if h not in H_PROFILES:
        raise ValueError(f"unknown h profile {h!r}")
    Bf = _b_profile(B, domain.Lx, domain.Ly)
    hf, dhf = H_PROFILES[h](amplitude, K)
    xs = np.linspace(0.0, domain.Lx, 65)
    ys = np.linspace(0.0, domain.Ly, 65)
    Bs = Bf(*np.meshgrid(xs, ys, indexing="ij"))
    hs = hf(np.linspace(-2 * K, 2 * K, 801))
    floor = float(min(Bs.min() * hs.min(), Bs.min() * hs.max(), Bs.max() * hs.min(), Bs.max() * hs.max()))
    if a0 is None:
        a0 = 1.0 + min(0.0, floor)
    return CoefficientModel(a0=a0, K=K, B=Bf, h=hf, dh=dhf, floor=floor, B_id=B, h_id=h, amplitude=amplitude)


@dataclass(frozen=True)
class ProblemSpec:
    """Domain plus the triple ``(f, g, a)``.  ``dimension`` is the N the growth hypotheses refer to."""

    domain: RectDomain
    f: NonlinearityModel
    g: NonlocalModel
    a: CoefficientModel
    dimension: int = 2
    name: str = "custom"

    def __post_init__(self):
        if self.f.kind == "exponential" and self.g.kind == "exponential":
            if not (1 < 2 * self.f.tau < self.g.xi < 2):
                raise ValueError(f"need 1 < 2 tau < xi < 2, got tau={self.f.tau}, xi={self.g.xi}")
        if self.dimension < 2:
            raise ValueError("dimension must be at least 2")

    @cached_property
    def B_grid(self) -> np.ndarray:
        X, Y = self.domain.mesh
        return np.asarray(self.a.B(X, Y), dtype=float) * np.ones(self.domain.shape)

    def z(self, u: np.ndarray) -> float:
        """Nonlocal argument ``int g(u) dx``."""
        return grid.integrate(self.g.g(u), self.domain)

    def a_grid(self, z: float) -> np.ndarray:
        return 1.0 + self.B_grid * self.a.h(z)

    def psi(self, u: np.ndarray, z: float) -> np.ndarray:
        if self.saturated(z):
            return np.zeros(np.shape(u))
        return _psi(self.a_grid(z), self.f.f(u))

    def phi(self, u: np.ndarray, z: Optional[float] = None, fu: Optional[np.ndarray] = None) -> np.ndarray:
        """Full right-hand side ``f(u) + Psi(x, u, z)``; ``z`` defaults to ``int g(u)``."""
        if z is None:
            z = self.z(u)
        if fu is None:
            fu = self.f.f(u)
        if self.saturated(z):
            return fu
        return fu + _psi(self.a_grid(z), fu)

    def saturated(self, z: float) -> bool:
        """True when ``a(., z) = 1`` identically, so that Psi vanishes."""
        return float(self.a.h(z)) == 0.0 or not np.any(self.B_grid)

    def overflow(self, u: np.ndarray) -> bool:
        return self.f.overflow(u) or self.g.overflow(u)

    def with_(self, **changes) -> "ProblemSpec":
        return replace(self, **changes)


def _psi(a, fu):
    a = np.asarray(a, dtype=float)
    return np.where(a == 1.0, 0.0, (1.0 / a - 1.0) * fu)


# scalar entry points


def f_eval(m: NonlinearityModel, t: float) -> float:
    return float(m.f(t))


def F_eval(m: NonlinearityModel, t: float, tol: float = 1e-12) -> float:
    """``int_0^t f`` by closed form when available, otherwise adaptive quadrature."""
    if m.F_mode == "closed" and (m.kind in ("polynomial", "linear") or m.prim is not None):
        return float(m.F(t))
    if t == 0:
        return 0.0
    # non-convergence is reported through the error estimate below
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sci_integrate.IntegrationWarning)
        val, err = sci_integrate.quad(lambda s: float(m.f(s)), 0.0, float(t), epsabs=tol, epsrel=tol, limit=200)
    if err > max(tol, tol * abs(val)) * 10:
        raise QuadratureError(tol, err)
    return float(val)


def g_eval(m: NonlocalModel, t: float) -> float:
    return float(m.g(t))


def a_eval(c: CoefficientModel, x, z: float) -> float:
    return float(c.a(x[0], x[1], z))


def psi_eval(spec: ProblemSpec, x, t: float, z: float) -> float:
    return float(_psi(spec.a.a(x[0], x[1], z), spec.f.f(t)))


# presets


def example1(domain: Optional[RectDomain] = None, **overrides) -> ProblemSpec:
    """Two-dimensional exponential case: ``f = |u|^(p-2) u e^{|u|^tau}``, ``g = e^{|u|^xi}``."""
    domain = domain or RectDomain(1.0, 1.0, 32, 32)
    o = dict(p=3.0, tau=0.6, xi=1.5, gamma=None, K=5.0, B="sinsin", h="bump", amplitude=0.5, a0=None)
    _merge(o, overrides)
    gamma = o["gamma"] if o["gamma"] is not None else o["p"] - 2.0
    return ProblemSpec(
        domain=domain,
        f=NonlinearityModel("exponential", p=o["p"], r=None, tau=o["tau"], gamma=gamma, F_mode="quadrature"),
        g=NonlocalModel("exponential", q=0.0, xi=o["xi"]),
        a=coefficient(domain, o["K"], o["B"], o["h"], o["amplitude"], o["a0"]),
        dimension=2,
        name="example1",
    )


def example2(domain: Optional[RectDomain] = None, **overrides) -> ProblemSpec:
    """Power case: ``f = |u|^(p-1) u + |u|^(r-1) u``, ``g = |u|^q``, hypotheses stated for N = 3."""
    domain = domain or RectDomain(EXAMPLE2_L, EXAMPLE2_L, 32, 32)
    o = dict(p=1.4, r=1.2, q=3.0, gamma=None, K=EXAMPLE2_K, B="sinsin", h="bump", amplitude=0.5, a0=None)
    _merge(o, overrides)
    gamma = o["gamma"] if o["gamma"] is not None else min(o["p"], o["r"]) - 1.0
    return ProblemSpec(
        domain=domain,
        f=NonlinearityModel("polynomial", p=o["p"], r=o["r"], gamma=gamma),
        g=NonlocalModel("power", q=o["q"]),
        a=coefficient(domain, o["K"], o["B"], o["h"], o["amplitude"], o["a0"]),
        dimension=3,
        name="example2",
    )


def cubic(domain: Optional[RectDomain] = None, **overrides) -> ProblemSpec:
    """Local problem ``-Lap u = u^3`` (``a = 1``), the classical blow-up test case."""
    domain = domain or RectDomain(1.0, 1.0, 32, 32)
    o = dict(K=1.0)
    _merge(o, overrides)
    return ProblemSpec(
        domain=domain,
        f=NonlinearityModel("polynomial", p=3.0, r=None, gamma=2.0),
        g=NonlocalModel("power", q=2.0),
        a=coefficient(domain, o["K"], "zero", "bump", 0.0),
        dimension=2,
        name="cubic",
    )


def heat(domain: Optional[RectDomain] = None, **overrides) -> ProblemSpec:
    """Linear heat flow, ``f = 0`` and ``a = 1``."""
    domain = domain or RectDomain(1.0, 1.0, 32, 32)
    o = dict(K=1.0)
    _merge(o, overrides)
    return ProblemSpec(
        domain=domain,
        f=NonlinearityModel("linear", p=0.0, r=None, gamma=1.0),
        g=NonlocalModel("power", q=2.0),
        a=coefficient(domain, o["K"], "zero", "bump", 0.0),
        dimension=2,
        name="heat",
    )


def _merge(defaults: dict, overrides: dict):
    unknown = set(overrides) - set(defaults)
    if unknown:
        raise ValueError(f"unknown preset parameter(s): {sorted(unknown)}")
    defaults.update(overrides)


# Example 2 is posed on a square of side EXAMPLE2_L so that the nontrivial
# solution has amplitude of order one; K sits below int |u_s|^3 so that the
# solution itself lies in the saturated regime a = 1.
EXAMPLE2_L = 3.0
EXAMPLE2_K = 5.0

PRESETS = {"example1": example1, "example2": example2, "cubic": cubic, "heat": heat}


def preset(name: str, domain: Optional[RectDomain] = None, **overrides) -> ProblemSpec:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(domain, **overrides)


def verify_conditions(spec: ProblemSpec, plan=None):
    """Sampled check of the structural hypotheses; see :mod:`basinflow.conditions`."""
    from .conditions import verify_conditions as _verify

    return _verify(spec, plan)
