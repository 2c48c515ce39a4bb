"""
Quadratic Lagrange elements on triangles.

Local node order on the reference triangle (0,0), (1,0), (0,1): the three
vertices, then the midpoints of edges 01, 12 and 20.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import permutations

import numpy as np

from .mesh import Mesh

REF_NODES = np.array(
    [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, 0.0], [0.5, 0.5], [0.0, 0.5]]
)


@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the reference triangle.

    ``points`` holds barycentric coordinates ``(l0, l1, l2)``; weights sum to
    the reference area 1/2.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def xy(self) -> np.ndarray:
        """Reference coordinates ``(x, y) = (l1, l2)``."""
        return self.points[:, 1:]


def _orbit(*bary):
    return sorted(set(permutations(bary)))


def _rule(orbits, degree):
    pts, wts = [], []
    for w, bary in orbits:
        for p in _orbit(*bary):
            pts.append(p)
            wts.append(w)
    return QuadratureRule(np.array(pts), 0.5 * np.array(wts), degree)


def _dunavant6():
    a, b = 0.50142650965817915742, 0.87382197101699554332
    c, d = 0.053145049844816947353, 0.31035245103378440542
    return _rule(
        [
            (0.11678627572637936603, (a, (1 - a) / 2, (1 - a) / 2)),
            (0.050844906370206816921, (b, (1 - b) / 2, (1 - b) / 2)),
            (0.082851075618373575194, (c, d, 1 - c - d)),
        ],
        6,
    )


_RULES = {
    1: _rule([(1.0, (1 / 3, 1 / 3, 1 / 3))], 1),
    2: _rule([(1 / 3, (2 / 3, 1 / 6, 1 / 6))], 2),
    6: _dunavant6(),
}


def quad_rule(min_degree: int) -> QuadratureRule:
    """Symmetric positive-weight rule exact to at least ``min_degree``."""
    for deg in sorted(_RULES):
        if deg >= min_degree:
            return _RULES[deg]
    raise ValueError(f"no quadrature rule of degree {min_degree} (max 6)")


def gauss_line(n: int = 3):
    """Gauss-Legendre points in [0, 1] and weights summing to 1."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def eval_basis(xy):
    """Shape functions on the reference triangle.

    Parameters
    ----------
    xy : (..., 2) array of reference coordinates

    Returns
    -------
    values : (..., 6)
    gradients : (..., 6, 2)
    hessians : (6, 2, 2)
        Constant second derivatives; ``np.trace`` gives the reference Laplacian.
    """
    xy = np.asarray(xy, dtype=float)
    x, y = xy[..., 0], xy[..., 1]
    l0 = 1.0 - x - y
    values = np.stack(
        [
            l0 * (2 * l0 - 1),
            x * (2 * x - 1),
            y * (2 * y - 1),
            4 * l0 * x,
            4 * x * y,
            4 * y * l0,
        ],
        axis=-1,
    )
    zero = np.zeros_like(x)
    gx = np.stack([1 - 4 * l0, 4 * x - 1, zero, 4 * (l0 - x), 4 * y, -4 * y], axis=-1)
    gy = np.stack([1 - 4 * l0, zero, 4 * y - 1, -4 * x, 4 * x, 4 * (l0 - y)], axis=-1)
    gradients = np.stack([gx, gy], axis=-1)
    hessians = np.array(
        [
            [[4, 4], [4, 4]],
            [[4, 0], [0, 0]],
            [[0, 0], [0, 4]],
            [[-8, -4], [-4, 0]],
            [[0, 4], [4, 0]],
            [[0, -4], [-4, -8]],
        ],
        dtype=float,
    )
    return values, gradients, hessians


class FeSpace:
    """Continuous P2 space on ``mesh`` with Dirichlet nodes on the boundary.

    DOFs ``0..nv-1`` sit at vertices, ``nv + e`` at the midpoint of edge ``e``.
    """

    def __init__(self, mesh: Mesh, quadrature: QuadratureRule | None = None):
        self.mesh = mesh
        self.quadrature = quadrature or quad_rule(6)
        nv = mesh.n_vertices
        ce = mesh.cell_edges
        self.dof_map = np.hstack([mesh.cells, nv + ce[:, [2, 0, 1]]])
        self.dof_map.setflags(write=False)
        self.n_dofs = nv + mesh.n_edges
        flags = np.concatenate([mesh.boundary_vertices, mesh.boundary_edges])
        self.dirichlet_mask = flags
        self.dirichlet_dofs = np.flatnonzero(flags)

    @cached_property
    def node_coords(self) -> np.ndarray:
        m = self.mesh
        mid = 0.5 * (m.vertices[m.edges[:, 0]] + m.vertices[m.edges[:, 1]])
        return np.vstack([m.vertices, mid])

    @cached_property
    def _geometry(self):
        p = self.mesh.vertices[self.mesh.cells]
        B = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns
        det = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
        Binv = np.linalg.inv(B)
        return p[:, 0], B, det, Binv

    @property
    def jacobian_det(self) -> np.ndarray:
        return self._geometry[2]

    def to_physical(self, xy) -> np.ndarray:
        """Map reference points ``(nq, 2)`` (or per-cell ``(nt, nq, 2)``) to physical ones."""
        origin, B, _, _ = self._geometry
        xy = np.asarray(xy, dtype=float)
        if xy.ndim == 2:
            return origin[:, None, :] + np.einsum("tij,qj->tqi", B, xy)
        return origin[:, None, :] + np.einsum("tij,tqj->tqi", B, xy)

    def push_gradients(self, ref_grads) -> np.ndarray:
        """Reference gradients ``(..., 6, 2)`` -> physical ``(nt, ..., 6, 2)``."""
        Binv = self._geometry[3]
        if ref_grads.ndim == 3:
            return np.einsum("qka,tab->tqkb", ref_grads, Binv)
        return np.einsum("tqka,tab->tqkb", ref_grads, Binv)

    @cached_property
    def laplacians(self) -> np.ndarray:
        """(nt, 6) constant Laplacians of the basis functions."""
        Binv = self._geometry[3]
        H = eval_basis(np.zeros(2))[2]
        # physical Hessian = B^{-T} H B^{-1}
        return np.einsum("tai,kab,tbi->tk", Binv, H, Binv)

    @cached_property
    def tabulation(self):
        """Basis data at quadrature points.

        Returns ``(phi, lap, jxw, xq)`` with shapes ``(nq, 6)``, ``(nt, 6)``,
        ``(nt, nq)`` and ``(nt, nq, 2)``.
        """
        q = self.quadrature
        phi = eval_basis(q.xy)[0]
        jxw = np.abs(self.jacobian_det)[:, None] * q.weights[None, :]
        xq = self.to_physical(q.xy)
        return phi, self.laplacians, jxw, xq

    @cached_property
    def quad_gradients(self) -> np.ndarray:
        """(nt, nq, 6, 2) physical basis gradients at quadrature points."""
        return self.push_gradients(eval_basis(self.quadrature.xy)[1])

    @cached_property
    def stiffness_local(self) -> np.ndarray:
        """(nt, 6, 6) element stiffness matrices."""
        q = self.quadrature
        dphi = eval_basis(q.xy)[1]
        ref = np.einsum("q,qia,qjb->abij", q.weights, dphi, dphi).reshape(4, 36)
        Binv = self._geometry[3]
        metric = np.abs(self.jacobian_det)[:, None, None] * (Binv @ np.swapaxes(Binv, 1, 2))
        return (metric.reshape(-1, 4) @ ref).reshape(-1, 6, 6)

    def gradient_at_quadrature(self, coef) -> np.ndarray:
        """(nt, nq, 2) gradient of a field given by local coefficients."""
        dphi = eval_basis(self.quadrature.xy)[1]
        ref = np.einsum("qka,tk->tqa", dphi, coef)
        return ref @ self._geometry[3]

    def local(self, u) -> np.ndarray:
        return np.asarray(u)[self.dof_map]


def build_space(mesh: Mesh) -> FeSpace:
    return FeSpace(mesh)


def interpolate(field, space: FeSpace) -> np.ndarray:
    """Nodal interpolant of ``field(x, y)`` as a coefficient vector."""
    x = space.node_coords
    values = np.asarray(field(x[:, 0], x[:, 1]), dtype=float)
    return np.broadcast_to(values, (space.n_dofs,)).copy()


def evaluate(u, space: FeSpace, cells, xy):
    """Value, gradient and Laplacian of ``u`` at reference points.

    ``cells`` and ``xy`` broadcast against each other: ``cells`` has shape
    ``(n,)`` and ``xy`` shape ``(n, 2)`` or ``(2,)``.
    """
    cells = np.atleast_1d(np.asarray(cells, dtype=np.int64))
    xy = np.broadcast_to(np.asarray(xy, dtype=float), (len(cells), 2))
    phi, dphi, _ = eval_basis(xy)
    coef = np.asarray(u)[space.dof_map[cells]]
    Binv = space._geometry[3][cells]
    value = np.einsum("nk,nk->n", phi, coef)
    grad = np.einsum("nka,nab,nk->nb", dphi, Binv, coef)
    lap = np.einsum("nk,nk->n", space.laplacians[cells], coef)
    return value, grad, lap


def locate(space: FeSpace, points):
    """Cell containing each point and its reference coordinates there."""
    import matplotlib.tri as mtri

    m = space.mesh
    points = np.asarray(points, dtype=float)
    tri = mtri.Triangulation(m.vertices[:, 0], m.vertices[:, 1], m.cells)
    cells = tri.get_trifinder()(points[:, 0], points[:, 1])
    if np.any(cells < 0):
        raise ValueError(f"{np.count_nonzero(cells < 0)} points lie outside the mesh")
    return cells, _reference_coords(space, cells, points)


def _reference_coords(space: FeSpace, cells, points):
    origin, _, _, Binv = space._geometry
    return np.einsum("nab,nb->na", Binv[cells], points - origin[cells])


def transfer(u, source: FeSpace, target: FeSpace) -> np.ndarray:
    """Evaluate the P2 field ``u`` on ``source`` at the nodes of ``target``.

    Uses the refinement ancestry when ``target`` was refined from ``source``
    and point location otherwise.
    """
    fine = target.mesh
    x = target.node_coords
    if fine.parent is not None and len(fine.parent) == fine.n_cells and fine.parent.max() < source.mesh.n_cells:
        node_cell = np.empty(target.n_dofs, dtype=np.int64)
        node_cell[target.dof_map.ravel()] = np.repeat(fine.parent, 6)
        xy = _reference_coords(source, node_cell, x)
        if np.all(xy >= -1e-10) and np.all(xy.sum(axis=1) <= 1 + 1e-10):
            return evaluate(u, source, node_cell, xy)[0]
    cells, xy = locate(source, x)
    return evaluate(u, source, cells, xy)[0]
