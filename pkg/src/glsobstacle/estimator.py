"""Residual a posteriori indicators, bulk marking and the adaptive loop."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .assembly import Forms, ProblemData, positive_part
from .fespace import FeSpace, REF_NODES, build_space, eval_basis, gauss_line, transfer
from .mesh import Mesh, interior_faces, refine
from .solver import SolveReport, SolverError, SolverOptions, newton_solve, no_contact_guess

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IndicatorField:
    """Per-cell indicators; ``volume`` and ``jump`` are the squared parts."""

    eta: np.ndarray
    volume: np.ndarray
    jump: np.ndarray

    @property
    def E_global(self) -> float:
        return float(np.sqrt(np.sum(self.eta**2)))


def normal_jumps(u, space: FeSpace, n_gauss: int = 3):
    """Squared L2 norm of the normal-derivative jump on every interior edge.

    Returns ``(edge_ids, left, right, jump_sq)``.
    """
    mesh = space.mesh
    edge_ids, left, right, normals = interior_faces(mesh)
    if len(edge_ids) == 0:
        return edge_ids, left, right, np.zeros(0)
    t, w = gauss_line(n_gauss)
    ends = mesh.edges[edge_ids]
    coef = np.asarray(u)
    Binv = space._geometry[3]

    def normal_derivative(cells):
        local = mesh.cells[cells]
        ia = np.argmax(local == ends[:, :1], axis=1)
        ib = np.argmax(local == ends[:, 1:], axis=1)
        xa, xb = REF_NODES[ia], REF_NODES[ib]
        xy = (1 - t)[None, :, None] * xa[:, None, :] + t[None, :, None] * xb[:, None, :]
        dphi = eval_basis(xy)[1]  # (nf, ng, 6, 2)
        c = coef[space.dof_map[cells]]
        grad = np.einsum("fgka,fab,fk->fgb", dphi, Binv[cells], c)
        return np.einsum("fgb,fb->fg", grad, normals)

    jump = normal_derivative(left) - normal_derivative(right)
    length = mesh.edge_lengths[edge_ids]
    return edge_ids, left, right, length * (jump**2 @ w)


def element_indicators(u, data: ProblemData, space: FeSpace, forms: Forms | None = None) -> IndicatorField:
    """``eta_T^2 = h_T^2 ||f + lap u_h - lambda_h||_T^2 + 1/2 sum_e h_e ||[du_h/dn]||_e^2``."""
    forms = forms or Forms(data, space)
    _, _, jxw, _ = space.tabulation
    _, lap_u, gap = forms.fields(u)
    res = forms.fq + lap_u[:, None] + positive_part(gap) / forms.gamma[:, None]
    h = space.mesh.diameters
    volume = h**2 * np.sum(jxw * res**2, axis=1)

    edge_ids, left, right, jump_sq = normal_jumps(u, space)
    share = 0.5 * space.mesh.edge_lengths[edge_ids] * jump_sq
    n = space.mesh.n_cells
    jump = np.bincount(left, share, minlength=n) + np.bincount(right, share, minlength=n)
    return IndicatorField(np.sqrt(volume + jump), volume, jump)


def dorfler_mark(indicators: IndicatorField, theta: float) -> np.ndarray:
    """Smallest set of cells carrying ``theta^2`` of the squared estimate.

    Cells are taken by decreasing indicator, ties by lower cell id.
    """
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    eta2 = indicators.eta**2
    order = np.lexsort((np.arange(len(eta2)), -eta2))
    cum = np.cumsum(eta2[order])
    if len(cum) == 0 or cum[-1] == 0:
        return np.zeros(0, dtype=np.int64)
    k = int(np.searchsorted(cum, theta**2 * cum[-1], side="left")) + 1
    return np.sort(order[: min(k, len(order))])


@dataclass(frozen=True)
class AdaptOptions:
    theta: float = 0.5
    max_dofs: int = 100_000
    max_levels: int = 50
    solver: SolverOptions = SolverOptions()


@dataclass
class LevelResult:
    level: int
    mesh: Mesh
    space: FeSpace
    report: SolveReport
    indicators: IndicatorField
    marked: np.ndarray
    errors: tuple | None
    wall_time: float


def adapt_loop(data: ProblemData, mesh: Mesh, opts: AdaptOptions = AdaptOptions(), case=None):
    """Solve, estimate, mark and refine until a budget is exhausted.

    Yields one :class:`LevelResult` per level. The previous solution,
    transferred to the refined mesh, is the next initial guess. When ``case``
    is given, its exact solution provides the error record.
    """
    from .benchmarks import error_norms

    u_prev = space_prev = None
    for level in range(opts.max_levels):
        start = time.perf_counter()
        space = build_space(mesh)
        forms = Forms(data, space)
        if u_prev is None:
            init = no_contact_guess(data, space)
        else:
            init = transfer(u_prev, space_prev, space)
        try:
            report = newton_solve(data, space, init, opts.solver, forms=forms)
        except SolverError as exc:
            raise SolverError(f"adaptive level {level}: {exc}") from exc
        if not report.converged:
            raise SolverError(f"adaptive level {level}: Newton did not converge")
        ind = element_indicators(report.solution, data, space, forms)
        errors = error_norms(report.solution, case, space) if case is not None else None
        last = level + 1 == opts.max_levels or space.n_dofs >= opts.max_dofs
        marked = np.zeros(0, dtype=np.int64) if last else dorfler_mark(ind, opts.theta)
        elapsed = time.perf_counter() - start
        log.info(
            "level %d: %d dofs, %d Newton iterations, E = %.3e, marked %d/%d",
            level, space.n_dofs, report.iterations, ind.E_global, len(marked), mesh.n_cells,
        )
        yield LevelResult(level, mesh, space, report, ind, marked, errors, elapsed)
        if last:
            return
        u_prev, space_prev = report.solution, space
        mesh = refine(mesh, marked)
