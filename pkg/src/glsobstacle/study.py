"""Convergence studies on the benchmark problems."""
from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import Forms, ProblemData, nodal_h
from .benchmarks import BenchmarkCase, R0, error_norms, get_case
from .estimator import AdaptOptions, adapt_loop, element_indicators
from .fespace import build_space, transfer
from .solver import SolverError, SolverOptions, newton_solve, no_contact_guess

log = logging.getLogger(__name__)

# largest round value below 1/(2 C_i^2) = 1/192 for the benchmark meshes
LOCAL_GAMMA0 = 1 / 200
GLOBAL_GAMMA0 = 1 / 100


def _far_obstacle(x, y):
    return np.full(np.shape(x), -1e6)


@dataclass
class StudyConfig:
    case: str = "smooth"
    mode: str = "uniform"
    levels: int = 5
    n0: int = 0
    max_dofs: int = 100_000
    gamma0: float = 0.0
    gamma_mode: str = "auto"
    theta: float = 0.5
    abs_tol: float = 1e-10
    rel_tol: float = 1e-12
    max_iter: int = 50
    out: str = "results"
    seed: int = 0
    serial: bool = False
    vtk: bool = False
    verbose: bool = False
    no_contact: bool = False

    def __post_init__(self):
        if self.mode not in ("uniform", "adaptive"):
            raise ValueError("mode must be 'uniform' or 'adaptive'")
        if self.levels < 1:
            raise ValueError("levels must be at least 1")
        if not 0 < self.theta <= 1:
            raise ValueError("theta must lie in (0, 1]")
        if self.gamma0 < 0:
            raise ValueError("gamma0 must be positive")
        get_case(self.case)

    def resolved(self) -> "StudyConfig":
        """Copy with every ``auto``/zero default replaced by its effective value."""
        mode = self.gamma_mode
        if mode == "auto":
            mode = "global" if (self.mode == "uniform" and self.case == "smooth") else "local"
        gamma0 = self.gamma0 or (GLOBAL_GAMMA0 if mode == "global" else LOCAL_GAMMA0)
        n0 = self.n0 or (4 if self.case == "smooth" else 1)
        return dataclasses.replace(self, gamma_mode=mode, gamma0=gamma0, n0=n0)

    def solver_options(self) -> SolverOptions:
        return SolverOptions(
            abs_tol=self.abs_tol, rel_tol=self.rel_tol, max_iter=self.max_iter, verbose=self.verbose
        )

    def problem(self, case: BenchmarkCase) -> ProblemData:
        cfg = self.resolved()
        if cfg.no_contact:
            # obstacle far below; -lap u keeps the exact solution exact
            return ProblemData(
                lambda x, y: -case.exact_laplacian(x, y), _far_obstacle, case.g, cfg.gamma0, cfg.gamma_mode
            )
        return ProblemData(case.f, case.psi, case.g, cfg.gamma0, cfg.gamma_mode)


CSV_FIELDS = ("level", "ndof", "h", "err_l2", "err_h1", "estimator", "newton_iters", "wall_ms")


@dataclass
class Row:
    level: int
    ndof: int
    h: float
    err_l2: float
    err_h1: float
    estimator: float
    newton_iters: int
    wall_ms: float


@dataclass
class StudyRecord:
    rows: list[Row] = field(default_factory=list)
    extras: list[dict] = field(default_factory=list)
    slopes: dict = field(default_factory=dict)


def fit_slope(h, err, window: int = 3) -> float | None:
    """Least-squares slope of ``log err`` against ``log h`` over the last levels."""
    h = np.asarray(h, dtype=float)[-window:]
    err = np.asarray(err, dtype=float)[-window:]
    if len(h) < 2 or np.any(h <= 0) or np.any(err <= 0):
        return None
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


def compute_slopes(record: StudyRecord, window: int = 3) -> dict:
    if len(record.rows) < 2:
        return {}
    h = [r.h for r in record.rows]
    ndof = [r.ndof for r in record.rows]
    out = {}
    for name in ("err_l2", "err_h1", "estimator"):
        vals = [getattr(r, name) for r in record.rows]
        out[name] = fit_slope(h, vals, window)
        s = fit_slope(ndof, vals, window)
        out[name + "_vs_ndof"] = s
    return out


def multiplier_diagnostics(forms: Forms, u, case: BenchmarkCase) -> dict:
    lam = forms.multiplier(u)
    diag = {"multiplier_max": float(lam.max()) if lam.size else 0.0}
    if case.name == "smooth":
        xq = forms.space.tabulation[3]
        inner = np.hypot(xq[..., 0], xq[..., 1]) < R0 / 2
        if inner.any():
            diag["multiplier_disc_error"] = float(np.max(np.abs(lam - forms.fq)[inner]))
    return diag


def _level_record(level, space, forms, report, ind, case, h_report, elapsed, serial):
    l2, h1, lap = error_norms(report.solution, case, space)
    row = Row(
        level=level,
        ndof=space.n_dofs,
        h=float(h_report),
        err_l2=l2,
        err_h1=h1,
        estimator=ind.E_global,
        newton_iters=report.iterations,
        wall_ms=0.0 if serial else 1e3 * elapsed,
    )
    extra = {
        "level": level,
        "err_broken_laplacian": lap,
        "h_min": float(space.mesh.diameters.min()),
        "h_max": float(space.mesh.diameters.max()),
        "n_cells": space.mesh.n_cells,
        "converged": report.converged,
        "residual": report.residual_norms[-1],
        "energies": report.energies,
    }
    extra.update(multiplier_diagnostics(forms, report.solution, case))
    return row, extra


def run_uniform_study(config: StudyConfig, on_level=None) -> StudyRecord:
    """Solve on meshes with ``n0 * 2^l`` subdivisions, ``l = 0 .. levels-1``.

    Each level starts from the previous solution transferred to the new mesh.
    ``on_level(record, level_data)`` is called after every level.
    """
    cfg = config.resolved()
    case = get_case(cfg.case)
    data = cfg.problem(case)
    opts = cfg.solver_options()
    record = StudyRecord()
    prev = None
    for level in range(cfg.levels):
        start = time.perf_counter()
        space = build_space(case.build_mesh(cfg.n0 * 2**level))
        forms = Forms(data, space)
        init = no_contact_guess(data, space) if prev is None else transfer(*prev, space)
        report = newton_solve(data, space, init, opts, forms=forms)
        if not report.converged:
            raise SolverError(f"uniform level {level}: Newton did not converge")
        ind = element_indicators(report.solution, data, space, forms)
        elapsed = time.perf_counter() - start
        row, extra = _level_record(
            level, space, forms, report, ind, case, nodal_h(space), elapsed, cfg.serial
        )
        record.rows.append(row)
        record.extras.append(extra)
        log.info("level %d: ndof=%d err_h1=%.3e E=%.3e", level, row.ndof, row.err_h1, row.estimator)
        if on_level is not None:
            on_level(record, (space, forms, report, ind))
        prev = (report.solution, space)
    record.slopes = compute_slopes(record)
    return record


def run_adaptive_study(config: StudyConfig, on_level=None) -> StudyRecord:
    """Adaptive loop from the coarse mesh until ``max_dofs`` or ``levels``."""
    cfg = config.resolved()
    case = get_case(cfg.case)
    data = cfg.problem(case)
    opts = AdaptOptions(
        theta=cfg.theta, max_dofs=cfg.max_dofs, max_levels=cfg.levels, solver=cfg.solver_options()
    )
    record = StudyRecord()
    for res in adapt_loop(data, case.build_mesh(cfg.n0), opts):
        forms = Forms(data, res.space)
        row, extra = _level_record(
            res.level, res.space, forms, res.report, res.indicators, case,
            res.mesh.diameters.min(), res.wall_time, cfg.serial,
        )
        extra["marked"] = int(len(res.marked))
        record.rows.append(row)
        record.extras.append(extra)
        if on_level is not None:
            on_level(record, (res.space, forms, res.report, res.indicators))
    record.slopes = compute_slopes(record)
    return record


def run_study(config: StudyConfig, out_dir: str | Path | None = None) -> StudyRecord:
    """Run the configured study and write all outputs, keeping partial results on failure."""
    from . import output

    cfg = config.resolved()
    out = Path(out_dir or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    output.write_config(cfg, out / "config.txt")

    def on_level(record, level_data):
        output.write_csv(record, out / "convergence.csv")
        if cfg.vtk:
            space, forms, report, ind = level_data
            output.write_vtk(
                out / f"level_{record.rows[-1].level:02d}.vtk",
                space,
                report.solution,
                eta=ind.eta,
                multiplier=forms.multiplier(report.solution).mean(axis=1),
            )

    runner = run_uniform_study if cfg.mode == "uniform" else run_adaptive_study
    record = runner(cfg, on_level=on_level)
    output.emit_outputs(record, cfg, out)
    return record
