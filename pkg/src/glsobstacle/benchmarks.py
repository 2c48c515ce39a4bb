"""Manufactured obstacle problems with known solutions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fespace import FeSpace
from .mesh import Mesh, build_lshape_mesh, build_square_mesh

R0 = 0.25


@dataclass(frozen=True)
class BenchmarkCase:
    name: str
    build_mesh: Callable[[int], Mesh]
    exact_u: Callable
    exact_grad: Callable
    exact_laplacian: Callable
    f: Callable
    psi: Callable
    regularity: str

    @property
    def g(self):
        return self.exact_u


def _zero(x, y):
    return np.zeros_like(np.asarray(x, dtype=float))


# --- smooth radial solution on the square ---------------------------------

def _smooth_u(x, y):
    s = np.maximum(x * x + y * y - R0**2, 0.0)
    return s * s


def _smooth_grad(x, y):
    s = np.maximum(x * x + y * y - R0**2, 0.0)
    return np.stack([4 * s * x, 4 * s * y], axis=-1)


def _smooth_laplacian(x, y):
    r2 = x * x + y * y
    return np.where(r2 > R0**2, 16 * r2 - 8 * R0**2, 0.0)


def _smooth_f(x, y):
    r2 = x * x + y * y
    s = r2 - R0**2
    return np.where(r2 <= R0**2, -8 * R0**2 * (1 - s), -8 * (r2 + s))


def smooth_case() -> BenchmarkCase:
    """``u = [r^2 - 1/16]_+^2`` on (-1, 1)^2 with zero obstacle."""
    return BenchmarkCase(
        name="smooth",
        build_mesh=build_square_mesh,
        exact_u=_smooth_u,
        exact_grad=_smooth_grad,
        exact_laplacian=_smooth_laplacian,
        f=_smooth_f,
        psi=_zero,
        regularity="C^1 with bounded second derivatives (in H^3 away from r = r0)",
    )


# --- corner singularity on the L-shape ------------------------------------

def blend(r):
    """Quintic cutoff equal to 1 for r < 1/4 and 0 for r >= 3/4, with derivatives.

    Returns ``(g, dg/dr, d2g/dr2)``.
    """
    r = np.asarray(r, dtype=float)
    t = 2.0 * (r - 0.25)
    mid = (t >= 0) & (t < 1)
    g = np.where(t < 0, 1.0, np.where(mid, -6 * t**5 + 15 * t**4 - 10 * t**3 + 1, 0.0))
    # chain rule, dt/dr = 2
    dg = np.where(mid, 2 * (-30 * t**4 + 60 * t**3 - 30 * t**2), 0.0)
    d2g = np.where(mid, 4 * (-120 * t**3 + 180 * t**2 - 60 * t), 0.0)
    return g, dg, d2g


def step(r):
    return np.where(np.asarray(r) <= 1.25, 0.0, 1.0)


def polar_angle(x, y):
    """Angle in [0, 3pi/2], measured counter-clockwise from the positive x-axis."""
    phi = np.arctan2(y, x)
    return np.where(phi < 0, phi + 2 * np.pi, phi)


def _ns_parts(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = np.hypot(x, y)
    phi = polar_angle(x, y)
    g, dg, d2g = blend(r)
    return r, phi, g, dg, d2g


def _ns_u(x, y):
    r, phi, g, _, _ = _ns_parts(x, y)
    return r ** (2 / 3) * g * np.sin(2 * phi / 3)


def _ns_grad(x, y):
    r, phi, g, dg, _ = _ns_parts(x, y)
    rs = np.where(r > 0, r, 1.0)
    s, c = np.sin(2 * phi / 3), np.cos(2 * phi / 3)
    ur = (2 / 3) * rs ** (-1 / 3) * g * s + rs ** (2 / 3) * dg * s
    uphi_over_r = (2 / 3) * rs ** (-1 / 3) * g * c
    cp, sp = np.cos(phi), np.sin(phi)
    gx = ur * cp - uphi_over_r * sp
    gy = ur * sp + uphi_over_r * cp
    # the gradient is singular at the origin; report 0 there
    return np.stack([np.where(r > 0, gx, 0.0), np.where(r > 0, gy, 0.0)], axis=-1)


def _ns_laplacian(x, y):
    r, phi, _, dg, d2g = _ns_parts(x, y)
    rs = np.where(r > 0, r, 1.0)
    s = np.sin(2 * phi / 3)
    lap = rs ** (2 / 3) * s * (dg / rs + d2g) + (4 / 3) * rs ** (-1 / 3) * dg * s
    return np.where(r > 0, lap, 0.0)


def _ns_f(x, y):
    r = np.hypot(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    return -_ns_laplacian(x, y) - step(r)


def nonsmooth_case() -> BenchmarkCase:
    """``u = r^{2/3} g(r) sin(2 phi / 3)`` on the L-shape with zero obstacle."""
    return BenchmarkCase(
        name="nonsmooth",
        build_mesh=build_lshape_mesh,
        exact_u=_ns_u,
        exact_grad=_ns_grad,
        exact_laplacian=_ns_laplacian,
        f=_ns_f,
        psi=_zero,
        regularity="H^{5/3 - eps}",
    )


CASES = {"smooth": smooth_case, "nonsmooth": nonsmooth_case}


def get_case(name: str) -> BenchmarkCase:
    try:
        return CASES[name]()
    except KeyError:
        raise ValueError(f"unknown case {name!r}; choose from {sorted(CASES)}") from None


def error_norms(u, case: BenchmarkCase, space: FeSpace):
    """``(||u - u_h||, |u - u_h|_1, ||lap(u - u_h)||_h)`` by degree-6 quadrature."""
    phi, lap, jxw, xq = space.tabulation
    coef = space.local(u)
    uh = coef @ phi.T
    duh = space.gradient_at_quadrature(coef)
    lap_uh = (lap * coef).sum(axis=1)
    x, y = xq[..., 0], xq[..., 1]
    e0 = case.exact_u(x, y) - uh
    e1 = case.exact_grad(x, y) - duh
    e2 = case.exact_laplacian(x, y) - lap_uh[:, None]
    l2 = np.sqrt(np.sum(jxw * e0**2))
    h1 = np.sqrt(np.sum(jxw * (e1**2).sum(axis=-1)))
    bl = np.sqrt(np.sum(jxw * e2**2))
    return float(l2), float(h1), float(bl)
