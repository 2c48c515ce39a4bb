"""Property and convergence checks shared by ``selftest`` and the test suite.

Each ``check_*`` function returns a :class:`CheckResult`; none of them raise
on a failed property.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import Forms, ProblemData, cell_inverse_constants, positive_part
from .benchmarks import get_case
from .fespace import build_space
from .solver import SolverOptions, newton_solve
from .study import LOCAL_GAMMA0, StudyConfig, StudyRecord, run_adaptive_study, run_uniform_study


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    data: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def _smooth_problem(gamma0=LOCAL_GAMMA0, mode="local") -> ProblemData:
    c = get_case("smooth")
    return ProblemData(c.f, c.psi, c.g, gamma0, mode)


def _random_state(forms: Forms, rng, scale=1.0):
    """Random coefficients with the Dirichlet values of the problem."""
    u = scale * rng.uniform(-1.0, 1.0, forms.space.n_dofs)
    return forms.impose_dirichlet(u)


def _random_direction(space, rng):
    w = rng.uniform(-1.0, 1.0, space.n_dofs)
    w[space.dirichlet_dofs] = 0.0
    return w


# --- rates and tracking ----------------------------------------------------

def smooth_uniform_record(levels=5) -> StudyRecord:
    return run_uniform_study(StudyConfig(case="smooth", levels=levels, n0=4, gamma0=0.01, gamma_mode="global"))


def check_smooth_rates(record: StudyRecord) -> CheckResult:
    s2, s1 = record.slopes.get("err_l2"), record.slopes.get("err_h1")
    ok = s2 is not None and s1 is not None and 2.7 <= s2 <= 3.3 and 1.8 <= s1 <= 2.2
    return CheckResult(
        "smooth optimal rates", ok, f"L2 slope {s2:.3f} in [2.7, 3.3], H1 slope {s1:.3f} in [1.8, 2.2]",
        {"l2": s2, "h1": s1},
    )


def efficiency_band(record: StudyRecord) -> float:
    eff = np.array([r.estimator / r.err_h1 for r in record.rows])
    return float(eff.max() / eff.min())


def check_efficiency(records: dict[str, StudyRecord], factor: float = 3.0) -> CheckResult:
    bands = {name: efficiency_band(rec) for name, rec in records.items()}
    ok = all(b <= factor for b in bands.values())
    detail = ", ".join(f"{k} max/min E/err_H1 = {v:.3f}" for k, v in bands.items())
    return CheckResult("estimator tracking", ok, detail + f" (limit {factor})", bands)


def nonsmooth_records(theta=0.7, max_dofs=100_000, uniform_levels=7):
    uni = run_uniform_study(StudyConfig(case="nonsmooth", levels=uniform_levels, n0=1))
    ada = run_adaptive_study(
        StudyConfig(case="nonsmooth", mode="adaptive", levels=60, max_dofs=max_dofs, theta=theta, n0=1)
    )
    return uni, ada


def uniform_error_at(record: StudyRecord, ndof: float) -> float:
    """H1 error of the uniform study at ``ndof``, log-log interpolated.

    Beyond the finest level the last-three-level power law is extrapolated.
    """
    n = np.log([r.ndof for r in record.rows])
    e = np.log([r.err_h1 for r in record.rows])
    x = np.log(ndof)
    if x <= n[-1]:
        return float(np.exp(np.interp(x, n, e)))
    slope, icpt = np.polyfit(n[-3:], e[-3:], 1)
    return float(np.exp(icpt + slope * x))


def check_nonsmooth(uni: StudyRecord, ada: StudyRecord, tol=0.2, start_level=3) -> CheckResult:
    s = uni.slopes.get("err_h1")
    rate_ok = s is not None and 0.5 <= s <= 0.9
    # compare against a uniform mesh with up to 20% more unknowns
    wins = [
        (r.level, r.err_h1, uniform_error_at(uni, (1 + tol) * r.ndof))
        for r in ada.rows
        if r.level >= start_level
    ]
    gain_ok = bool(wins) and all(ea < eu for _, ea, eu in wins)
    worst = max((ea / eu for _, ea, eu in wins), default=np.inf)
    ok = rate_ok and gain_ok
    return CheckResult(
        "nonsmooth suboptimality and adaptive gain", ok,
        f"uniform H1 slope {s:.3f} in [0.5, 0.9]; worst adaptive/uniform H1 ratio "
        f"{worst:.3f} over {len(wins)} levels (final ndof {ada.rows[-1].ndof})",
        {"slope": s, "worst_ratio": worst},
    )


# --- well-posedness ---------------------------------------------------------

def discrete_h1(space, forms, d) -> float:
    return float(np.sqrt(max(d @ (forms.stiffness @ d), 0.0)))


def check_uniqueness(n=8, n_random=3, seed=0, gamma0=LOCAL_GAMMA0) -> CheckResult:
    data = _smooth_problem(gamma0)
    space = build_space(get_case("smooth").build_mesh(n))
    forms = Forms(data, space)
    ci = float(cell_inverse_constants(space).max())
    admissible = gamma0 < 0.5 / ci**2
    rng = np.random.default_rng(seed)
    inits = [forms.impose_dirichlet(np.zeros(space.n_dofs))]
    inits += [_random_state(forms, rng) for _ in range(n_random)]
    sols, iters = [], []
    for u0 in inits:
        rep = newton_solve(data, space, u0, SolverOptions(max_iter=100), forms=forms)
        sols.append(rep.solution)
        iters.append(rep.iterations if rep.converged else -1)
    dist = max(discrete_h1(space, forms, s - sols[0]) for s in sols[1:])
    ok = admissible and all(i >= 0 for i in iters) and dist <= 1e-8
    return CheckResult(
        "uniqueness", ok,
        f"max H1 distance {dist:.2e} (<= 1e-8), Newton iterations {iters}, "
        f"gamma0 {gamma0:.4g} < 0.5/C_i^2 = {0.5 / ci**2:.4g}",
        {"distance": dist, "ci": ci},
    )


def check_scalar_monotonicity(n_pairs=1_000_000, seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    # mix of scales and exact zeros so both branches of the kink are hit
    a = rng.standard_normal(n_pairs) * 10.0 ** rng.integers(-8, 9, n_pairs)
    b = rng.standard_normal(n_pairs) * 10.0 ** rng.integers(-8, 9, n_pairs)
    b[::97] = 0.0
    b[1::89] = a[1::89]
    d = positive_part(a) - positive_part(b)
    first = d * d <= d * (a - b)
    second = np.abs(d) <= np.abs(a - b)
    fails = int(np.count_nonzero(~first) + np.count_nonzero(~second))
    return CheckResult(
        "scalar monotonicity", fails == 0, f"{fails} failures over {n_pairs} pairs", {"failures": fails}
    )


def check_discrete_monotonicity(n=4, n_pairs=100, seed=0, gamma0=LOCAL_GAMMA0) -> CheckResult:
    data = _smooth_problem(gamma0)
    space = build_space(get_case("smooth").build_mesh(n))
    forms = Forms(data, space)
    rng = np.random.default_rng(seed)
    fails, worst = 0, np.inf
    for k in range(n_pairs):
        scale = 10.0 ** rng.uniform(-3, 1)
        u1 = _random_state(forms, rng, scale)
        u2 = _random_state(forms, rng, scale)
        d = u1 - u2
        val = (forms.residual(u1) - forms.residual(u2)) @ d
        norm2 = d @ d
        worst = min(worst, val / norm2)
        if val < -1e-12 * norm2:
            fails += 1
    return CheckResult(
        "discrete monotonicity", fails == 0,
        f"{fails} failures over {n_pairs} pairs, min (dR.d)/|d|^2 = {worst:.3e}", {"failures": fails},
    )


# --- derivative checks ------------------------------------------------------

def _kink_margin(forms, u, w, eps):
    """Smallest ``|gap|`` relative to its change along ``+-eps w``."""
    _, _, g0 = forms.fields(u)
    _, _, g1 = forms.fields(u + eps * w)
    change = np.abs(g1 - g0)
    return np.min(np.abs(g0) - 2 * change)


def check_jacobian(n=4, n_configs=20, seed=0, eps=1e-6) -> CheckResult:
    data = _smooth_problem()
    space = build_space(get_case("smooth").build_mesh(n))
    forms = Forms(data, space)
    rng = np.random.default_rng(seed)
    jac_err, grad_err, used, tries = [], [], 0, 0
    while used < n_configs and tries < 50 * n_configs:
        tries += 1
        u = _random_state(forms, rng, 10.0 ** rng.uniform(-2, 0))
        w = _random_direction(space, rng)
        if _kink_margin(forms, u, w, eps) <= 0:
            continue
        used += 1
        fd = (forms.residual(u + eps * w) - forms.residual(u - eps * w)) / (2 * eps)
        Jw = forms.jacobian(u, eliminate=False) @ w
        Jw[space.dirichlet_dofs] = 0.0
        jac_err.append(np.linalg.norm(fd - Jw) / np.linalg.norm(Jw))
        # no kink is crossed, so the functional is quadratic on the segment
        dF = (forms.energy(u + eps * w) - forms.energy(u - eps * w)) / (2 * eps)
        Rw = forms.residual(u) @ w
        grad_err.append(abs(dF - Rw) / max(abs(Rw), 1e-300))
    jmax = max(jac_err, default=np.inf)
    gmax = max(grad_err, default=np.inf)
    ok = used == n_configs and jmax <= 1e-5 and gmax <= 1e-6
    return CheckResult(
        "Jacobian and gradient consistency", ok,
        f"{used} configurations, max FD rel. error {jmax:.2e} (<= 1e-5), "
        f"max functional-gradient rel. error {gmax:.2e} (<= 1e-6)",
        {"jacobian": jmax, "gradient": gmax},
    )


def check_multiplier(records: list[StudyRecord], smooth: StudyRecord) -> CheckResult:
    sign_ok = all(e["multiplier_max"] <= 0.0 for rec in records for e in rec.extras)
    disc = [e["multiplier_disc_error"] for e in smooth.extras if "multiplier_disc_error" in e][-3:]
    mono_ok = len(disc) == 3 and disc[0] > disc[1] > disc[2]
    return CheckResult(
        "multiplier sign and consistency", sign_ok and mono_ok,
        f"lambda_h <= 0 on all solves: {sign_ok}; disc-interior |lambda_h - f| over last 3 levels "
        + ", ".join(f"{v:.3e}" for v in disc),
        {"disc": disc},
    )


# --- independent residual oracle -------------------------------------------

_MONOMIALS = 6


def _poly_row(x, y):
    return np.array([1.0, x, y, x * x, x * y, y * y])


def reference_residual_form(u, v, data: ProblemData, space) -> float:
    """``A_h(u; v) - (f, v)`` by explicit loops over cells and quadrature points.

    Each local basis function is rebuilt as a physical quadratic from its
    nodal values, so no reference-element derivatives are shared with the
    vectorized assembly.
    """
    mesh = space.mesh
    rule_pts = space.quadrature.points
    rule_w = space.quadrature.weights
    nodes = space.node_coords
    total = 0.0
    for t in range(mesh.n_cells):
        dofs = space.dof_map[t]
        V = np.array([_poly_row(*nodes[d]) for d in dofs])
        C = np.linalg.solve(V, np.eye(6))  # column i: monomial coefficients of phi_i
        cu = C @ u[dofs]
        cv = C @ v[dofs]
        p0, p1, p2 = mesh.vertices[mesh.cells[t]]
        area = 0.5 * abs((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
        h = max(np.linalg.norm(p1 - p0), np.linalg.norm(p2 - p1), np.linalg.norm(p0 - p2))
        if data.gamma_mode == "local":
            gamma = data.gamma0 * h * h
        else:
            gamma = data.gamma0 / space.n_dofs
        lap_u = 2 * cu[3] + 2 * cu[5]
        lap_v = 2 * cv[3] + 2 * cv[5]
        for (l0, l1, l2), wq in zip(rule_pts, rule_w):
            x = l0 * p0[0] + l1 * p1[0] + l2 * p2[0]
            y = l0 * p0[1] + l1 * p1[1] + l2 * p2[1]
            m = _poly_row(x, y)
            uq, vq = m @ cu, m @ cv
            gu = np.array([cu[1] + 2 * cu[3] * x + cu[4] * y, cu[2] + cu[4] * x + 2 * cu[5] * y])
            gv = np.array([cv[1] + 2 * cv[3] * x + cv[4] * y, cv[2] + cv[4] * x + 2 * cv[5] * y])
            f = float(data.f(x, y))
            psi = float(data.psi(x, y))
            gap = (psi - gamma * f) - (uq + gamma * lap_u)
            integrand = (
                gu @ gv
                - max(gap, 0.0) / gamma * (vq + gamma * lap_v)
                - gamma * (lap_u + f) * lap_v
                - f * vq
            )
            total += 2 * area * wq * integrand
    return total


def check_oracle(n=2, n_configs=10, seed=0) -> CheckResult:
    data = _smooth_problem()
    space = build_space(get_case("smooth").build_mesh(n))
    forms = Forms(data, space)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_configs):
        u = _random_state(forms, rng, 10.0 ** rng.uniform(-2, 0))
        v = _random_direction(space, rng)
        ref = reference_residual_form(u, v, data, space)
        fast = forms.residual(u) @ v
        worst = max(worst, abs(fast - ref) / abs(ref))
    return CheckResult(
        "residual oracle equivalence", worst <= 1e-12,
        f"max rel. difference {worst:.2e} over {n_configs} configurations (<= 1e-12)", {"worst": worst},
    )


# --- runners ----------------------------------------------------------------

def quick_checks(seed=0) -> list[CheckResult]:
    """Property suites that finish in seconds."""
    return [
        check_uniqueness(seed=seed),
        check_scalar_monotonicity(seed=seed),
        check_discrete_monotonicity(seed=seed),
        check_jacobian(seed=seed),
        check_oracle(seed=seed),
    ]


def full_checks(seed=0) -> list[CheckResult]:
    """All properties plus the convergence studies (several minutes)."""
    smooth = smooth_uniform_record()
    uni, ada = nonsmooth_records()
    return [
        check_smooth_rates(smooth),
        check_efficiency({"smooth uniform": smooth, "nonsmooth uniform": uni, "nonsmooth adaptive": ada}),
        check_nonsmooth(uni, ada),
        *quick_checks(seed)[:4],
        check_multiplier([smooth, uni, ada], smooth),
        check_oracle(seed=seed),
    ]
