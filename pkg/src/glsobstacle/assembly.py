"""
Nonlinear forms of the multiplier-free Galerkin least squares obstacle method.

With ``P(w) = w + gamma * lap(w)`` and the shifted obstacle
``Psi = psi - gamma * f`` the discrete problem reads: find ``u_h`` with

    (grad u_h, grad v) + <gamma^-1 [Psi - P(u_h)]_+, -P(v)>_h
        - <gamma (lap u_h + f), lap v>_h = (f, v)

for all ``v`` in the P2 space. ``<., .>_h`` is the sum of element integrals.
All element integrals use the space's quadrature rule; cells are processed
in one vectorized pass and scattered in ascending cell order.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .fespace import FeSpace, interpolate

log = logging.getLogger(__name__)

GAMMA_MODES = ("local", "global")


@dataclass(frozen=True)
class ProblemData:
    """Load ``f``, obstacle ``psi``, Dirichlet trace ``g`` and penalty scaling.

    In ``local`` mode ``gamma_T = gamma0 * h_T^2``; in ``global`` mode a single
    ``gamma = gamma0 * h^2`` with ``h = 1/sqrt(number of P2 nodes)``.
    """

    f: Callable
    psi: Callable
    g: Callable
    gamma0: float = 0.01
    gamma_mode: str = "local"

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ValueError("gamma0 must be positive")
        if self.gamma_mode not in GAMMA_MODES:
            raise ValueError(f"gamma_mode must be one of {GAMMA_MODES}")


def nodal_h(space: FeSpace) -> float:
    """Mesh size ``1/sqrt(NNO)`` with NNO the number of P2 nodes."""
    return 1.0 / np.sqrt(space.n_dofs)


def gamma_per_cell(data: ProblemData, space: FeSpace) -> np.ndarray:
    if data.gamma_mode == "local":
        return data.gamma0 * space.mesh.diameters**2
    return np.full(space.mesh.n_cells, data.gamma0 * nodal_h(space) ** 2)


def positive_part(x):
    return np.maximum(x, 0.0)


def _scatter_matrix(space: FeSpace, local: np.ndarray) -> sp.csr_matrix:
    dm = space.dof_map
    rows = np.repeat(dm, 6, axis=1).ravel()
    cols = np.tile(dm, (1, 6)).ravel()
    n = space.n_dofs
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def _scatter_vector(space: FeSpace, local: np.ndarray) -> np.ndarray:
    return np.bincount(space.dof_map.ravel(), weights=local.ravel(), minlength=space.n_dofs)


def eliminate_dirichlet(A: sp.spmatrix, space: FeSpace) -> sp.csr_matrix:
    """Zero Dirichlet rows and columns and put ones on their diagonal."""
    free = (~space.dirichlet_mask).astype(float)
    D = sp.diags(free)
    return (D @ A @ D + sp.diags(1.0 - free)).tocsr()


def assemble_stiffness(space: FeSpace) -> sp.csr_matrix:
    return _scatter_matrix(space, space.stiffness_local)


def assemble_load(f, space: FeSpace) -> np.ndarray:
    phi, _, jxw, xq = space.tabulation
    fq = np.broadcast_to(f(xq[..., 0], xq[..., 1]), jxw.shape)
    return _scatter_vector(space, (jxw * fq) @ phi)


def assemble_laplacian_product(space: FeSpace, weight=None) -> sp.csr_matrix:
    """``D_ij = sum_T w_T int_T lap(phi_i) lap(phi_j)``."""
    _, lap, jxw, _ = space.tabulation
    area = jxw.sum(axis=1)
    w = area if weight is None else area * weight
    return _scatter_matrix(space, w[:, None, None] * lap[:, :, None] * lap[:, None, :])


class Forms:
    """Residual, Jacobian and energy of the discrete problem on one space.

    Data fields are evaluated at the quadrature points once, on construction.
    """

    def __init__(self, data: ProblemData, space: FeSpace):
        self.data = data
        self.space = space
        phi, lap, jxw, xq = space.tabulation
        x, y = xq[..., 0], xq[..., 1]
        self.fq = np.broadcast_to(np.asarray(data.f(x, y), dtype=float), jxw.shape)
        psi_q = np.broadcast_to(np.asarray(data.psi(x, y), dtype=float), jxw.shape)
        self.gamma = gamma_per_cell(data, space)
        g = self.gamma[:, None]
        self.Psi = psi_q - g * self.fq
        # P(phi_i) at quadrature points: (nt, nq, 6)
        self.P_basis = phi[None, :, :] + g[:, :, None] * lap[:, None, :]

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        return assemble_stiffness(self.space)

    def dirichlet_values(self) -> np.ndarray:
        return interpolate(self.data.g, self.space)[self.space.dirichlet_dofs]

    def impose_dirichlet(self, u) -> np.ndarray:
        u = np.array(u, dtype=float)
        u[self.space.dirichlet_dofs] = self.dirichlet_values()
        return u

    def fields(self, u):
        """Local coefficients, ``lap u_h`` per cell and ``Psi - P(u_h)`` per point."""
        coef = self.space.local(u)
        phi, lap, _, _ = self.space.tabulation
        uq = coef @ phi.T
        lap_u = (lap * coef).sum(axis=1)
        gap = self.Psi - (uq + self.gamma[:, None] * lap_u[:, None])
        return coef, lap_u, gap

    def active(self, u) -> np.ndarray:
        """Quadrature points where the penalty is engaged (strict inequality)."""
        return self.fields(u)[2] > 0

    def local_residual(self, u) -> np.ndarray:
        phi, lap, jxw, _ = self.space.tabulation
        coef, lap_u, gap = self.fields(u)
        g = self.gamma
        r = (self.space.stiffness_local @ coef[:, :, None])[:, :, 0]
        pen = jxw * positive_part(gap) / g[:, None]
        r -= (pen[:, None, :] @ self.P_basis)[:, 0, :]
        vol = g * (jxw * (lap_u[:, None] + self.fq)).sum(axis=1)
        r -= vol[:, None] * lap
        r -= (jxw * self.fq) @ phi
        return r

    def residual(self, u) -> np.ndarray:
        """Residual vector with Dirichlet rows zeroed."""
        R = _scatter_vector(self.space, self.local_residual(u))
        R[self.space.dirichlet_dofs] = 0.0
        return R

    def jacobian(self, u, eliminate: bool = True) -> sp.csr_matrix:
        """Generalized derivative of the residual; symmetric."""
        _, lap, jxw, _ = self.space.tabulation
        _, _, gap = self.fields(u)
        g = self.gamma
        chi = (gap > 0).astype(float)
        w = jxw * chi / g[:, None]
        J = self.space.stiffness_local + np.swapaxes(self.P_basis * w[:, :, None], 1, 2) @ self.P_basis
        area = jxw.sum(axis=1)
        J -= (g * area)[:, None, None] * lap[:, :, None] * lap[:, None, :]
        A = _scatter_matrix(self.space, J)
        return eliminate_dirichlet(A, self.space) if eliminate else A

    def energy(self, u) -> float:
        """Discrete functional whose gradient is the residual."""
        phi, _, jxw, _ = self.space.tabulation
        coef, lap_u, gap = self.fields(u)
        g = self.gamma[:, None]
        dirichlet = 0.5 * np.sum(coef * (self.space.stiffness_local @ coef[:, :, None])[:, :, 0])
        uq = coef @ phi.T
        integrand = (
            0.5 / g * positive_part(gap) ** 2
            - 0.5 * g * (lap_u[:, None] + self.fq) ** 2
            - self.fq * uq
        )
        return float(dirichlet + np.sum(jxw * integrand))

    def multiplier(self, u) -> np.ndarray:
        """``lambda_h = -gamma^-1 [Psi - P(u_h)]_+`` at every quadrature point."""
        return -positive_part(self.fields(u)[2]) / self.gamma[:, None]


def residual(u, data: ProblemData, space: FeSpace) -> np.ndarray:
    return Forms(data, space).residual(u)


def jacobian(u, data: ProblemData, space: FeSpace) -> sp.csr_matrix:
    return Forms(data, space).jacobian(u)


def multiplier_field(u, data: ProblemData, space: FeSpace) -> np.ndarray:
    return Forms(data, space).multiplier(u)


def discrete_energy(u, data: ProblemData, space: FeSpace) -> float:
    return Forms(data, space).energy(u)


def cell_inverse_constants(space: FeSpace) -> np.ndarray:
    """Per-cell ``C`` with ``h_T ||lap v||_T <= C ||grad v||_T`` on P2.

    Square root of the largest eigenvalue of the pencil
    ``(h_T^2 * laplacian product, gradient product)`` on the complement of
    the constants, where the gradient product is definite.
    """
    _, lap, jxw, _ = space.tabulation
    K = space.stiffness_local
    h2area = space.mesh.diameters**2 * jxw.sum(axis=1)
    D = h2area[:, None, None] * lap[:, :, None] * lap[:, None, :]
    # orthonormal basis of the complement of the constant vector
    Q = np.linalg.qr(np.hstack([np.ones((6, 1)), np.eye(6)[:, :5]]))[0][:, 1:]
    Kr = Q.T @ K @ Q
    Dr = Q.T @ D @ Q
    L = np.linalg.cholesky(Kr)
    Linv = np.linalg.inv(L)
    S = Linv @ Dr @ np.swapaxes(Linv, 1, 2)
    mu = np.linalg.eigvalsh(0.5 * (S + np.swapaxes(S, 1, 2)))[:, -1]
    return np.sqrt(np.maximum(mu, 0.0))


def estimate_inverse_constant(space: FeSpace) -> float:
    return float(cell_inverse_constants(space).max())


def check_gamma(data: ProblemData, space: FeSpace, warn: bool = True) -> bool:
    """Check ``gamma_T < h_T^2 / (2 C_i^2)`` on every cell; warn if violated."""
    c = cell_inverse_constants(space)
    ok = bool(np.all(gamma_per_cell(data, space) * c**2 < 0.5 * space.mesh.diameters**2))
    if not ok and warn:
        warnings.warn(
            f"gamma0={data.gamma0} ({data.gamma_mode}) violates the stability bound "
            f"gamma < h^2/(2 C_i^2), C_i={c.max():.4g}",
            stacklevel=2,
        )
    return ok
