"""
Conforming triangular meshes and newest-vertex bisection.

Cells are stored counter-clockwise as ``(v0, v1, v2)`` where ``v0`` is the
newest vertex, i.e. the refinement edge of every cell is ``(v1, v2)``.
Bisecting a cell inserts the midpoint ``m`` of that edge and produces the
children ``(m, v0, v1)`` and ``(m, v2, v0)``, which keeps the orientation and
the convention above.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangulation.

    Parameters
    ----------
    vertices : (nv, 2) float array
    cells : (nt, 3) int array, newest vertex first, counter-clockwise
    parent : (nt,) int array or None
        Index of the ancestor cell in the mesh this one was refined from.
    """

    vertices: np.ndarray
    cells: np.ndarray
    parent: np.ndarray | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.ascontiguousarray(self.vertices, dtype=float))
        object.__setattr__(self, "cells", np.ascontiguousarray(self.cells, dtype=np.int64))
        self.vertices.setflags(write=False)
        self.cells.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @cached_property
    def _edge_data(self):
        # local edge k is opposite local vertex k
        c = self.cells
        local = np.stack([c[:, [1, 2]], c[:, [2, 0]], c[:, [0, 1]]], axis=1)  # (nt, 3, 2)
        keys = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse = np.unique(keys, axis=0, return_inverse=True)
        cell_edges = inverse.reshape(-1, 3)
        counts = np.bincount(inverse.ravel(), minlength=len(edges))
        # first and second incident cell, in ascending cell order
        order = np.argsort(inverse.ravel(), kind="stable")
        cell_of = order // 3
        start = np.concatenate([[0], np.cumsum(counts)[:-1]])
        edge_cells = np.full((len(edges), 2), -1, dtype=np.int64)
        edge_cells[:, 0] = cell_of[start]
        two = counts == 2
        edge_cells[two, 1] = cell_of[start[two] + 1]
        return edges, cell_edges, edge_cells, counts

    @property
    def edges(self) -> np.ndarray:
        """(ne, 2) sorted vertex pairs."""
        return self._edge_data[0]

    @property
    def cell_edges(self) -> np.ndarray:
        """(nt, 3) edge ids; column k is the edge opposite local vertex k."""
        return self._edge_data[1]

    @property
    def edge_cells(self) -> np.ndarray:
        """(ne, 2) incident cells, second column -1 on the boundary."""
        return self._edge_data[2]

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return self._edge_data[3] == 1

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        flags = np.zeros(self.n_vertices, dtype=bool)
        flags[self.edges[self.boundary_edges].ravel()] = True
        return flags

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def diameters(self) -> np.ndarray:
        """Longest edge of each cell (h_T)."""
        return self.edge_lengths[self.cell_edges].max(axis=1)

    def min_angle(self) -> float:
        """Smallest interior angle over all cells, in radians."""
        p = self.vertices[self.cells]
        angles = []
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.arccos(np.clip(cos, -1.0, 1.0)))
        return float(np.min(angles))

    def check(self) -> None:
        """Raise ``ValueError`` if a structural invariant is violated."""
        counts = self._edge_data[3]
        if np.any(counts > 2):
            raise ValueError("edge shared by more than two cells")
        if np.any(self.signed_areas <= 0):
            raise ValueError("non-positive cell area")
        if self.n_vertices - self.n_edges + self.n_cells != 1:
            raise ValueError("Euler characteristic differs from 1")


def interior_faces(mesh: Mesh):
    """Interior edges with their two cells and the unit normal.

    Returns
    -------
    edge_ids, left, right : int arrays
        ``left`` is the lower cell id.
    normals : (nf, 2) array
        Unit normal pointing from ``left`` into ``right``.
    """
    edge_ids = np.flatnonzero(~mesh.boundary_edges)
    left = mesh.edge_cells[edge_ids, 0]
    right = mesh.edge_cells[edge_ids, 1]
    a, b = mesh.vertices[mesh.edges[edge_ids, 0]], mesh.vertices[mesh.edges[edge_ids, 1]]
    t = b - a
    n = np.stack([t[:, 1], -t[:, 0]], axis=1)
    n /= np.linalg.norm(n, axis=1)[:, None]
    # orient away from the left cell's centroid
    centroid = mesh.vertices[mesh.cells[left]].mean(axis=1)
    flip = np.einsum("ij,ij->i", n, a - centroid) < 0
    n[flip] *= -1
    return edge_ids, left, right, n


def _orient_longest_edge(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Rotate every cell so the longest edge is its refinement edge.

    Ties go to the edge whose opposite vertex has the lowest global index.
    """
    cells = np.asarray(cells, dtype=np.int64).copy()
    p = vertices[cells]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    flip = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    cells[flip] = cells[flip][:, [0, 2, 1]]
    p = vertices[cells]
    lengths = np.stack(
        [np.linalg.norm(p[:, (k + 2) % 3] - p[:, (k + 1) % 3], axis=1) for k in range(3)], axis=1
    )
    lmax = lengths.max(axis=1, keepdims=True)
    is_long = np.isclose(lengths, lmax, rtol=1e-12, atol=0.0)
    key = np.where(is_long, cells, np.iinfo(np.int64).max)
    k = np.argmin(key, axis=1)
    idx = (k[:, None] + np.arange(3)[None, :]) % 3
    return np.take_along_axis(cells, idx, axis=1)


def _grid_cells(nx: int, ny: int, keep=None) -> np.ndarray:
    """Split every grid square along its (lower-left, upper-right) diagonal."""
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    i, j = i.ravel(), j.ravel()
    if keep is not None:
        mask = keep(i, j)
        i, j = i[mask], j[mask]
    v00 = i * (ny + 1) + j
    v10 = (i + 1) * (ny + 1) + j
    v01 = i * (ny + 1) + j + 1
    v11 = (i + 1) * (ny + 1) + j + 1
    lower = np.stack([v00, v10, v11], axis=1)
    upper = np.stack([v00, v11, v01], axis=1)
    return np.stack([lower, upper], axis=1).reshape(-1, 3)


def _compress(vertices: np.ndarray, cells: np.ndarray) -> Mesh:
    used = np.unique(cells)
    remap = np.full(len(vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    v = vertices[used]
    c = remap[cells]
    return Mesh(v, _orient_longest_edge(v, c))


def build_square_mesh(n: int) -> Mesh:
    """Uniform mesh of (-1, 1)^2 with ``2 n^2`` cells."""
    if n < 1:
        raise ValueError(f"invalid subdivision count n={n}")
    x = np.linspace(-1.0, 1.0, n + 1)
    X, Y = np.meshgrid(x, x, indexing="ij")
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)
    return _compress(vertices, _grid_cells(n, n))


def build_lshape_mesh(n: int) -> Mesh:
    """Uniform mesh of (-2, 2)^2 minus [0, 2) x (-2, 0], ``n`` cells per unit length."""
    if n < 1:
        raise ValueError(f"invalid subdivision count n={n}")
    m = 4 * n
    x = np.linspace(-2.0, 2.0, m + 1)
    X, Y = np.meshgrid(x, x, indexing="ij")
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)
    # drop the squares of the lower-right quadrant
    cells = _grid_cells(m, m, keep=lambda i, j: ~((i >= 2 * n) & (j < 2 * n)))
    return _compress(vertices, cells)


def refine(mesh: Mesh, marked) -> Mesh:
    """Newest-vertex bisection of ``marked`` cells plus conformity closure.

    Every marked cell is bisected at least once. The returned mesh carries
    ``parent``, the index in ``mesh`` of each new cell's ancestor.
    """
    marked = np.unique(np.asarray(list(marked) if isinstance(marked, (set, frozenset)) else marked,
                                  dtype=np.int64))
    nt = mesh.n_cells
    if marked.size == 0:
        return Mesh(mesh.vertices, mesh.cells, np.arange(nt))
    if marked.min() < 0 or marked.max() >= nt:
        raise IndexError("marked cell id out of range")

    ce = mesh.cell_edges
    split = np.zeros(mesh.n_edges, dtype=bool)
    split[ce[marked, 0]] = True
    # closure: a cell with any split edge must also split its refinement edge
    while True:
        need = split[ce].any(axis=1) & ~split[ce[:, 0]]
        if not need.any():
            break
        split[ce[need, 0]] = True

    edge_ids = np.flatnonzero(split)
    nv = mesh.n_vertices
    midpoints = 0.5 * (mesh.vertices[mesh.edges[edge_ids, 0]] + mesh.vertices[mesh.edges[edge_ids, 1]])
    vertices = np.vstack([mesh.vertices, midpoints])
    mid_of_edge = np.full(mesh.n_edges, -1, dtype=np.int64)
    mid_of_edge[edge_ids] = nv + np.arange(len(edge_ids))

    # sorted vertex-pair keys of split edges, for lookups on child cells
    e = mesh.edges[edge_ids]
    keys = e[:, 0] * len(vertices) + e[:, 1]
    order = np.argsort(keys)
    keys, mids = keys[order], mid_of_edge[edge_ids][order]

    def midpoint_of(a, b):
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        k = lo * len(vertices) + hi
        pos = np.searchsorted(keys, k)
        pos = np.minimum(pos, len(keys) - 1)
        hit = keys[pos] == k
        return np.where(hit, mids[pos], -1)

    cells = mesh.cells
    parent = np.arange(nt)
    # at most two levels of bisection per original cell
    for _ in range(2):
        m = midpoint_of(cells[:, 1], cells[:, 2])
        cut = m >= 0
        if not cut.any():
            break
        c = cells[cut]
        mc = m[cut]
        child1 = np.stack([mc, c[:, 0], c[:, 1]], axis=1)
        child2 = np.stack([mc, c[:, 2], c[:, 0]], axis=1)
        children = np.stack([child1, child2], axis=1).reshape(-1, 3)
        # keep children adjacent to their parent's slot for stable ordering
        counts = np.where(cut, 2, 1)
        slot = np.concatenate([[0], np.cumsum(counts)[:-1]])
        new_cells = np.empty((counts.sum(), 3), dtype=np.int64)
        new_parent = np.repeat(parent, counts)
        keep = ~cut
        new_cells[slot[keep]] = cells[keep]
        s = slot[cut]
        new_cells[s] = children[0::2]
        new_cells[s + 1] = children[1::2]
        cells, parent = new_cells, new_parent
    return Mesh(vertices, cells, parent)
