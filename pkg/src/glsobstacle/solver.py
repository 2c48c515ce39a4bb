"""Damped semismooth Newton method and sparse linear solves."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import Forms, ProblemData, check_gamma
from .fespace import FeSpace

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Linear solve failed or the Newton iteration broke down."""


@dataclass(frozen=True)
class SolverOptions:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-12
    max_iter: int = 50
    backtrack: float = 0.5
    max_backtracks: int = 20
    linear_method: str = "direct"
    verbose: bool = False

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")


@dataclass
class SolveReport:
    solution: np.ndarray
    iterations: int
    residual_norms: list[float]
    converged: bool
    active_set_changes: list[int] = field(default_factory=list)
    step_lengths: list[float] = field(default_factory=list)
    energies: list[float] = field(default_factory=list)


def linear_solve(A, b, method: str = "direct", tol: float = 1e-12) -> np.ndarray:
    """Solve ``A x = b`` for symmetric ``A``.

    ``method`` is ``"direct"`` (sparse LU) or ``"cg"`` (Jacobi-preconditioned
    conjugate gradients).
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b)
    if method == "direct":
        A.eliminate_zeros()
        try:
            # symmetric ordering without pivoting keeps fill low on graded meshes
            lu = spla.splu(
                A.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError:
            try:
                lu = spla.splu(A.tocsc(), permc_spec="COLAMD")
            except RuntimeError as exc:
                raise SolverError(f"factorization failed: {exc} ({_stats(A)})") from exc
        x = lu.solve(b)
        # one step of iterative refinement
        x += lu.solve(b - A @ x)
    elif method == "cg":
        d = A.diagonal()
        if np.any(d <= 0):
            raise SolverError(f"non-positive diagonal, CG not applicable ({_stats(A)})")
        M = sp.diags(1.0 / d)
        x, info = spla.cg(A, b, rtol=tol, atol=0.0, M=M, maxiter=10 * A.shape[0])
        if info != 0:
            raise SolverError(f"CG did not converge (info={info}; {_stats(A)})")
    else:
        raise ValueError(f"unknown linear method {method!r}")
    if not np.all(np.isfinite(x)):
        raise SolverError(f"singular system ({_stats(A)})")
    return x


def _stats(A) -> str:
    d = A.diagonal()
    return f"n={A.shape[0]}, nnz={A.nnz}, diag in [{d.min():.3g}, {d.max():.3g}]"


def newton_solve(
    data: ProblemData,
    space: FeSpace,
    init=None,
    opts: SolverOptions = SolverOptions(),
    forms: Forms | None = None,
) -> SolveReport:
    """Solve the discrete obstacle problem from ``init``.

    Steps are damped by backtracking on the Euclidean residual norm. When no
    damped step decreases the residual and the current active set was seen
    before, the full step is taken once to escape the cycle.
    """
    forms = forms or Forms(data, space)
    check_gamma(data, space)
    u = forms.impose_dirichlet(np.zeros(space.n_dofs) if init is None else init)

    R = forms.residual(u)
    norms = [float(np.linalg.norm(R))]
    tol = max(opts.abs_tol, opts.rel_tol * norms[0])
    active = forms.active(u)
    history = [active.tobytes()]
    forced = set()
    changes, steps, energies = [], [], [forms.energy(u)]
    it = 0
    while norms[-1] > tol and it < opts.max_iter:
        it += 1
        J = forms.jacobian(u)
        try:
            du = linear_solve(J, -R, opts.linear_method)
        except SolverError as exc:
            raise SolverError(f"Newton iteration {it}: {exc}") from exc

        s = 1.0
        for _ in range(opts.max_backtracks + 1):
            trial = u + s * du
            R_trial = forms.residual(trial)
            n_trial = float(np.linalg.norm(R_trial))
            if n_trial < (1 - 1e-4 * s) * norms[-1]:
                break
            s *= opts.backtrack
        else:
            key = history[-1]
            if key in history[:-1] and key not in forced:
                # semismooth iterations can cycle under damping
                forced.add(key)
                s = 1.0
            else:
                s /= opts.backtrack
            trial = u + s * du
            R_trial = forms.residual(trial)
            n_trial = float(np.linalg.norm(R_trial))

        u, R = trial, R_trial
        new_active = forms.active(u)
        changes.append(int(np.count_nonzero(new_active != active)))
        active = new_active
        history.append(active.tobytes())
        norms.append(n_trial)
        steps.append(s)
        energies.append(forms.energy(u))
        if opts.verbose:
            log.info(
                "newton %3d  |R| = %.3e  step = %.3g  active = %d",
                it, n_trial, s, int(active.sum()),
            )

    converged = norms[-1] <= tol
    if not converged:
        log.warning("Newton did not converge in %d iterations (|R| = %.3e)", it, norms[-1])
    return SolveReport(u, it, norms, converged, changes, steps, energies)


def no_contact_guess(data: ProblemData, space: FeSpace) -> np.ndarray:
    """Solution of the stabilized Poisson problem with the obstacle ignored."""
    free = ProblemData(
        data.f, lambda x, y: np.full_like(x, -np.inf), data.g, data.gamma0, data.gamma_mode
    )
    forms = Forms(free, space)
    u = forms.impose_dirichlet(np.zeros(space.n_dofs))
    return u + linear_solve(forms.jacobian(u), -forms.residual(u))
