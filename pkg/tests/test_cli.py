import dataclasses
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from glsobstacle import cli, output, study
from glsobstacle.fespace import build_space
from glsobstacle.mesh import build_square_mesh
from glsobstacle.solver import SolverError
from glsobstacle.study import (
    CSV_FIELDS,
    Row,
    StudyConfig,
    StudyRecord,
    fit_slope,
    run_adaptive_study,
    run_uniform_study,
)


def row(level, ndof=10):
    return Row(level, ndof * (level + 1), 0.1 / (level + 1), 1e-3 / 3, 2.0 / 7, np.pi, 3, 12.5)


# --- config -----------------------------------------------------------------

@pytest.mark.parametrize(
    "kwargs",
    [
        dict(gamma0=-1.0),
        dict(theta=0.0),
        dict(theta=1.5),
        dict(levels=0),
        dict(mode="random"),
        dict(case="circle"),
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        StudyConfig(**kwargs)


def test_config_defaults_resolve():
    cfg = StudyConfig().resolved()
    assert (cfg.gamma_mode, cfg.gamma0, cfg.n0) == ("global", 0.01, 4)
    cfg = StudyConfig(case="nonsmooth", mode="adaptive").resolved()
    assert (cfg.gamma_mode, cfg.gamma0, cfg.n0) == ("local", 0.005, 1)
    assert cfg.theta == 0.5
    cfg = StudyConfig(gamma0=0.002, gamma_mode="local").resolved()
    assert (cfg.gamma_mode, cfg.gamma0) == ("local", 0.002)


def test_config_text_round_trip(tmp_path):
    cfg = StudyConfig(case="nonsmooth", levels=3, theta=0.25, serial=True).resolved()
    path = output.write_config(cfg, tmp_path / "config.txt")
    assert StudyConfig(**output.read_config(path)) == cfg
    text = path.read_text()
    for f in dataclasses.fields(StudyConfig):
        assert f"{f.name} = " in text


def test_config_parser_accepts_comments_and_fractions():
    parsed = output.parse_config_text("# study\ncase = smooth\ngamma0 = 1/200  # local bound\nserial = yes\n")
    assert parsed == {"case": "smooth", "gamma0": 0.005, "serial": True}


@pytest.mark.parametrize("text", ["levels 3", "colour = red", "levels = many", "serial = maybe"])
def test_config_parser_errors(text):
    with pytest.raises(ValueError):
        output.parse_config_text(text)


# --- rates ------------------------------------------------------------------

def test_fit_slope_recovers_power_law():
    h = np.array([0.4, 0.2, 0.1, 0.05])
    assert fit_slope(h, 3 * h**2.5) == pytest.approx(2.5, rel=1e-12)
    assert fit_slope(h[:1], h[:1]) is None


# --- CSV, SVG, VTK ----------------------------------------------------------

def test_empty_record_csv_has_header_only(tmp_path):
    path = output.write_csv(StudyRecord(), tmp_path / "c.csv")
    assert path.read_text() == ",".join(CSV_FIELDS) + "\n"
    assert output.read_csv(path).rows == []


def test_csv_round_trip_is_exact(tmp_path):
    rec = StudyRecord(rows=[row(0), row(1), row(2)])
    path = output.write_csv(rec, tmp_path / "c.csv")
    assert output.read_csv(path).rows == rec.rows
    lines = path.read_text().splitlines()
    assert lines[0] == "level,ndof,h,err_l2,err_h1,estimator,newton_iters,wall_ms"
    assert "e-01" in lines[1] and "," in lines[1] and ";" not in lines[1]


def test_read_csv_rejects_foreign_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        output.read_csv(p)


def _svg_polylines(path):
    root = ET.parse(path).getroot()
    return root


@pytest.mark.parametrize("n_rows", [1, 4])
def test_plot_is_valid_svg(tmp_path, n_rows):
    rec = StudyRecord(rows=[row(k) for k in range(n_rows)])
    rec.slopes = study.compute_slopes(rec)
    path = output.write_plot(rec, tmp_path / "p.svg", "test")
    root = _svg_polylines(path)
    assert root.tag.endswith("svg")
    text = path.read_text()
    for label in ("L2 error", "H1 error", "estimator E"):
        assert label in text


def test_write_to_missing_directory_reports_path(tmp_path):
    target = tmp_path / "nope" / "c.csv"
    with pytest.raises(OSError, match="nope"):
        output.write_csv(StudyRecord(), target)


def test_vtk_layout(tmp_path):
    space = build_space(build_square_mesh(2))
    u = np.arange(space.n_dofs, dtype=float)
    eta = np.linspace(0, 1, space.mesh.n_cells)
    path = output.write_vtk(tmp_path / "m.vtk", space, u, eta=eta, multiplier=-eta)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# vtk DataFile")
    assert "DATASET UNSTRUCTURED_GRID" in lines
    i = lines.index("POINTS 9 double")
    assert lines[i + 1].split() == ["-1", "-1", "0"]
    assert "CELLS 8 32" in lines
    j = lines.index("CELL_TYPES 8")
    assert lines[j + 1 : j + 9] == ["5"] * 8
    k = lines.index("POINT_DATA 9")
    assert [float(v) for v in lines[k + 3 : k + 12]] == list(range(9))
    assert "CELL_DATA 8" in lines
    assert "SCALARS eta double 1" in lines and "SCALARS multiplier double 1" in lines


def test_vtk_rejects_wrong_cell_field(tmp_path):
    space = build_space(build_square_mesh(1))
    with pytest.raises(ValueError, match="eta"):
        output.write_vtk(tmp_path / "m.vtk", space, np.zeros(space.n_dofs), eta=np.zeros(5))


# --- studies ----------------------------------------------------------------

def test_single_level_study_has_no_slope():
    rec = run_uniform_study(StudyConfig(levels=1))
    assert len(rec.rows) == 1
    assert rec.slopes == {}


def test_uniform_study_rows():
    rec = run_uniform_study(StudyConfig(levels=3, serial=True))
    ndof = [r.ndof for r in rec.rows]
    assert ndof == sorted(set(ndof))
    for r in rec.rows:
        assert r.h == pytest.approx(1 / np.sqrt(r.ndof))
        assert r.wall_ms == 0.0
    assert all(e["multiplier_max"] <= 0 for e in rec.extras)


def test_adaptive_study_reports_min_diameter():
    rec = run_adaptive_study(StudyConfig(case="nonsmooth", mode="adaptive", levels=4, theta=0.7))
    assert len(rec.rows) == 4
    for r, e in zip(rec.rows, rec.extras):
        assert r.h == e["h_min"]
    ndof = [r.ndof for r in rec.rows]
    assert ndof == sorted(set(ndof))


def test_no_contact_variant_rates():
    rec = run_uniform_study(StudyConfig(levels=5, no_contact=True))
    assert all(r.newton_iters <= 1 for r in rec.rows)
    assert 1.8 <= rec.slopes["err_h1"] <= 2.2
    # u has a second-derivative jump on r = r0, which caps the L2 rate near 5/2
    assert rec.slopes["err_l2"] >= 2.25


def test_failed_level_keeps_partial_csv(tmp_path, monkeypatch):
    calls = {"n": 0}
    real = study.newton_solve

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 3:
            raise SolverError("Newton iteration 1: singular system")
        return real(*args, **kwargs)

    monkeypatch.setattr(study, "newton_solve", flaky)
    code = cli.main(["converge", "--levels", "4", "--out", str(tmp_path), "--serial"])
    assert code == cli.EXIT_SOLVER
    rows = output.read_csv(tmp_path / "convergence.csv").rows
    assert [r.level for r in rows] == [0, 1]
    assert (tmp_path / "config.txt").exists()


# --- command line -----------------------------------------------------------

def test_converge_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["converge", "--levels", "3", "--out", str(out), "--serial"]) == 0
    assert (a / "convergence.csv").read_bytes() == (b / "convergence.csv").read_bytes()
    for name in ("convergence.svg", "summary.json", "config.txt"):
        assert (a / name).exists()
    assert "slope err_h1" in capsys.readouterr().out


def test_config_file_and_overrides(tmp_path):
    cfg_file = tmp_path / "study.cfg"
    cfg_file.write_text("case = nonsmooth\nlevels = 5\ntheta = 0.6\nmax_dofs = 200\n")
    out = tmp_path / "run"
    code = cli.main(["adapt", "--config", str(cfg_file), "--levels", "3", "--out", str(out), "--vtk"])
    assert code == 0
    echoed = output.read_config(out / "config.txt")
    assert echoed["case"] == "nonsmooth"
    assert echoed["levels"] == 3
    assert echoed["theta"] == 0.6
    assert echoed["mode"] == "adaptive"
    assert echoed["gamma_mode"] == "local"
    assert len(list(out.glob("level_*.vtk"))) == len(output.read_csv(out / "convergence.csv").rows)


def test_solve_writes_fields(tmp_path, capsys):
    assert cli.main(["solve", "--case", "smooth", "--n", "4", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "solution.vtk").exists()
    assert "ndof 81" in capsys.readouterr().out


def test_bad_config_exit_code(tmp_path, capsys):
    cfg_file = tmp_path / "bad.cfg"
    cfg_file.write_text("theta = 2\n")
    assert cli.main(["adapt", "--config", str(cfg_file), "--out", str(tmp_path)]) == cli.EXIT_USAGE
    assert "theta" in capsys.readouterr().err


def test_solver_failure_exit_code(tmp_path):
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text("max_iter = 1\n")
    code = cli.main(["converge", "--config", str(cfg_file), "--levels", "2", "--out", str(tmp_path)])
    assert code == cli.EXIT_SOLVER


def test_selftest_passes(capsys):
    assert cli.main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 5 and "[FAIL]" not in out


def test_selftest_failure_exit_code(monkeypatch):
    from glsobstacle import verification

    bad = verification.CheckResult("broken", False, "forced")
    monkeypatch.setattr(verification, "quick_checks", lambda seed=0: [bad])
    assert cli.main(["selftest"]) == cli.EXIT_CHECK
