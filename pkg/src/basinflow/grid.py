"""Uniform finite-difference discretization of a rectangle with Dirichlet-zero walls.

Fields live on the interior nodes only and are stored as numpy arrays of shape
``(nx, ny)``; index ``[i, j]`` is the node ``(x_i, y_j) = ((i+1) hx, (j+1) hy)``.
The boundary values are implicitly zero.  ``A = -Laplacian`` is used throughout
(positive operator convention).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp

DENSE_EIGEN_LIMIT = 64 * 64


class SpectralSizeError(ValueError):
    """Dense eigensolve requested on a grid larger than the guard."""


@dataclass(frozen=True)
class RectDomain:
    """Rectangle ``(0, Lx) x (0, Ly)`` with ``nx * ny`` interior nodes."""

    Lx: float = 1.0
    Ly: float = 1.0
    nx: int = 32
    ny: int = 32

    def __post_init__(self):
        if not (self.Lx > 0 and self.Ly > 0):
            raise ValueError(f"side lengths must be positive, got Lx={self.Lx}, Ly={self.Ly}")
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ValueError("node counts must be integers")
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"need at least 3 interior nodes per axis, got nx={self.nx}, ny={self.ny}")

    @property
    def hx(self) -> float:
        return self.Lx / (self.nx + 1)

    @property
    def hy(self) -> float:
        return self.Ly / (self.ny + 1)

    @property
    def cell(self) -> float:
        """Quadrature weight ``hx * hy`` of one node."""
        return self.hx * self.hy

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @cached_property
    def x(self) -> np.ndarray:
        return self.hx * np.arange(1, self.nx + 1)

    @cached_property
    def y(self) -> np.ndarray:
        return self.hy * np.arange(1, self.ny + 1)

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        X, Y = np.meshgrid(self.x, self.y, indexing="ij")
        X.setflags(write=False)
        Y.setflags(write=False)
        return X, Y

    @cached_property
    def laplacian(self) -> sp.csc_matrix:
        """Sparse matrix of ``A = -Laplacian`` acting on C-order flattened fields."""
        Tx = _second_difference(self.nx) / self.hx**2
        Ty = _second_difference(self.ny) / self.hy**2
        A = sp.kron(Tx, sp.identity(self.ny)) + sp.kron(sp.identity(self.nx), Ty)
        return A.tocsc()

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def sample(self, func) -> np.ndarray:
        """Evaluate ``func(X, Y)`` on the interior nodes."""
        X, Y = self.mesh
        return np.asarray(func(X, Y), dtype=float) * np.ones(self.shape)


def _second_difference(n: int) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 1), 2.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


def laplacian_apply(u: np.ndarray, d: RectDomain) -> np.ndarray:
    """Return ``A u = -Laplacian_h u`` with the 5-point stencil and zero ghost values."""
    u = np.asarray(u, dtype=float).reshape(d.shape)
    cx, cy = 1.0 / d.hx**2, 1.0 / d.hy**2
    out = (2.0 * (cx + cy)) * u
    out[1:, :] -= cx * u[:-1, :]
    out[:-1, :] -= cx * u[1:, :]
    out[:, 1:] -= cy * u[:, :-1]
    out[:, :-1] -= cy * u[:, 1:]
    return out


def integrate(u: np.ndarray, d: RectDomain) -> float:
    """Rectangle rule over the interior nodes (boundary values are zero)."""
    return float(np.sum(u) * d.cell)


def inner(u: np.ndarray, v: np.ndarray, d: RectDomain) -> float:
    return float(np.sum(np.asarray(u) * np.asarray(v)) * d.cell)


def norm_l2(u: np.ndarray, d: RectDomain) -> float:
    return float(np.sqrt(inner(u, u, d)))


def norm_h1(u: np.ndarray, d: RectDomain) -> float:
    """Discrete Dirichlet norm ``sqrt(<A u, u>)``."""
    return float(np.sqrt(max(inner(laplacian_apply(u, d), u, d), 0.0)))


def energy(u: np.ndarray, spec) -> float:
    """``E(u) = 1/2 ||u||_{H1}^2 - int F(u)``; note E ignores the nonlocal coefficient."""
    d = spec.domain
    return 0.5 * norm_h1(u, d) ** 2 - integrate(spec.f.F(u), d)


@dataclass(frozen=True)
class SpectralBasis:
    """Eigenpairs of ``A`` on a rectangle, orthonormal in the discrete L2 product.

    The eigenvectors are tensor products of 1-D sine vectors, so they are kept as
    the two factor matrices ``Sx`` (``nx x nx``) and ``Sy`` (``ny x ny``).  Column
    ``k`` of ``Sx`` is ``sqrt(2/Lx) sin((k+1) pi x / Lx)`` sampled on the nodes.
    ``eigenvalues`` is flat and sorted ascending; ``modes[m] = (k, l)`` gives the
    zero-based factor indices of the ``m``-th eigenpair.
    """

    domain: RectDomain
    lam_x: np.ndarray
    lam_y: np.ndarray
    Sx: np.ndarray
    Sy: np.ndarray
    eigenvalues: np.ndarray
    modes: np.ndarray

    @property
    def grid_eigenvalues(self) -> np.ndarray:
        """Eigenvalues arranged as ``(nx, ny)`` to match ``coefficients``."""
        return self.lam_x[:, None] + self.lam_y[None, :]

    def coefficients(self, u: np.ndarray) -> np.ndarray:
        """``c[k, l] = <u, v_kl>`` in the discrete L2 product."""
        u = np.asarray(u, dtype=float).reshape(self.domain.shape)
        return self.Sx.T @ u @ self.Sy * self.domain.cell

    def synthesize(self, c: np.ndarray) -> np.ndarray:
        return self.Sx @ c @ self.Sy.T

    def mode(self, m: int) -> np.ndarray:
        k, l = self.modes[m]
        return np.outer(self.Sx[:, k], self.Sy[:, l])

    def vectors(self) -> np.ndarray:
        """Dense ``(nx*ny, nx*ny)`` matrix whose columns are the sorted eigenvectors."""
        d = self.domain
        if d.size > DENSE_EIGEN_LIMIT:
            raise SpectralSizeError(
                f"{d.nx}x{d.ny} exceeds the dense limit of 64x64; use coefficients()/synthesize()"
            )
        V = np.kron(self.Sx, self.Sy)
        flat = self.modes[:, 0] * d.ny + self.modes[:, 1]
        return V[:, flat]


def _sine_factor(n: int, L: float) -> tuple[np.ndarray, np.ndarray]:
    h = L / (n + 1)
    k = np.arange(1, n + 1)
    lam = (4.0 / h**2) * np.sin(k * np.pi * h / (2.0 * L)) ** 2
    nodes = h * np.arange(1, n + 1)
    S = np.sqrt(2.0 / L) * np.sin(np.pi * np.outer(nodes, k) / L)
    return lam, S


def spectral_basis(d: RectDomain, method: str = "closed") -> SpectralBasis:
    """Diagonalize ``A`` on ``d``.

    ``method="closed"`` uses the closed-form discrete sine modes (any size).
    ``method="dense"`` runs a dense symmetric eigensolve of each 1-D factor and
    is refused above 64x64 nodes.
    """
    if method == "closed":
        lam_x, Sx = _sine_factor(d.nx, d.Lx)
        lam_y, Sy = _sine_factor(d.ny, d.Ly)
    elif method == "dense":
        if d.size > DENSE_EIGEN_LIMIT:
            raise SpectralSizeError(
                f"dense eigensolve limited to 64x64 nodes, got {d.nx}x{d.ny}; use method='closed'"
            )
        lam_x, Sx = _dense_factor(d.nx, d.hx)
        lam_y, Sy = _dense_factor(d.ny, d.hy)
    else:
        raise ValueError(f"unknown method {method!r}")
    grid = lam_x[:, None] + lam_y[None, :]
    order = np.argsort(grid, axis=None, kind="stable")
    modes = np.column_stack(np.unravel_index(order, grid.shape))
    return SpectralBasis(d, lam_x, lam_y, Sx, Sy, grid.ravel()[order], modes)


def _dense_factor(n: int, h: float) -> tuple[np.ndarray, np.ndarray]:
    T = _second_difference(n).toarray() / h**2
    lam, V = scipy.linalg.eigh(T)
    V = V / np.sqrt(h)
    # fix the sign so that the first nonzero entry is positive, as for the sine modes
    signs = np.sign(V[np.argmax(np.abs(V) > 1e-12, axis=0), np.arange(n)])
    return lam, V * signs


def eigenmode(d: RectDomain, k: int = 1, l: int = 1) -> np.ndarray:
    """Sampled ``sin(k pi x/Lx) sin(l pi y/Ly)`` scaled to unit discrete L2 norm."""
    X, Y = d.mesh
    v = np.sin(k * np.pi * X / d.Lx) * np.sin(l * np.pi * Y / d.Ly)
    return v / norm_l2(v, d)


def eigenvalue(d: RectDomain, k: int = 1, l: int = 1) -> float:
    """Closed-form discrete eigenvalue of mode ``(k, l)``."""
    return float(
        (4.0 / d.hx**2) * np.sin(k * np.pi * d.hx / (2.0 * d.Lx)) ** 2
        + (4.0 / d.hy**2) * np.sin(l * np.pi * d.hy / (2.0 * d.Ly)) ** 2
    )
