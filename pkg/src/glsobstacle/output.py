"""Convergence tables, plots, VTK exports and config echo."""
from __future__ import annotations

import csv
import dataclasses
import json
from pathlib import Path

import numpy as np

from .fespace import FeSpace
from .study import CSV_FIELDS, Row, StudyConfig, StudyRecord

_INT_FIELDS = {"level", "ndof", "newton_iters"}


def _fmt(name, value) -> str:
    if name in _INT_FIELDS:
        return str(int(value))
    # 17 significant digits round-trip every double
    return f"{float(value):.16e}"


def _open(path: Path, mode="w"):
    try:
        return open(path, mode, newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def write_csv(record: StudyRecord, path) -> Path:
    path = Path(path)
    with _open(path) as fh:
        fh.write(",".join(CSV_FIELDS) + "\n")
        for row in record.rows:
            fh.write(",".join(_fmt(k, getattr(row, k)) for k in CSV_FIELDS) + "\n")
    return path


def read_csv(path) -> StudyRecord:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        rows = [
            Row(**{k: int(v) if k in _INT_FIELDS else float(v) for k, v in line.items()})
            for line in reader
        ]
    return StudyRecord(rows=rows)


def write_config(config: StudyConfig, path) -> Path:
    """Flat ``key = value`` echo, readable by :func:`read_config`."""
    path = Path(path)
    with _open(path) as fh:
        for f in dataclasses.fields(config):
            fh.write(f"{f.name} = {getattr(config, f.name)}\n")
    return path


def _coerce(value: str, kind):
    kind = kind if isinstance(kind, str) else kind.__name__
    if kind == "bool":
        low = value.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {value!r}")
        return low in ("true", "1", "yes")
    if kind == "int":
        return int(value)
    if kind == "float":
        # accepts "1/200" as well as decimals
        if "/" in value:
            num, den = value.split("/", 1)
            return float(num) / float(den)
        return float(value)
    return value


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    kinds = {f.name: f.type for f in dataclasses.fields(StudyConfig)}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(value, kinds[key])
    return out


def read_config(path) -> dict:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def _nice_slope(s: float) -> float:
    return max(round(3 * s) / 3, 1 / 3)


def _slope_triangle(ax, x, y, slope, below=True):
    """Draw a triangle of the given slope anchored at the last data point."""
    x1 = x * 2.0
    y1 = y * 2.0**slope
    shift = 0.5 if below else 2.0
    xs = [x, x1, x1, x]
    ys = [y * shift, y * shift, y1 * shift, y * shift]
    ax.plot(xs, ys, color="0.4", lw=0.8)
    label = f"{slope:.2g}" if slope != round(slope) else f"{int(slope)}"
    ax.text(x1 * 1.05, np.sqrt(y * y1) * shift, label, fontsize=8, color="0.3", va="center")


def write_plot(record: StudyRecord, path, title: str = "") -> Path:
    """Log-log SVG of the errors and the estimator against ``h``."""
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    path = Path(path)
    matplotlib.rcParams["svg.hashsalt"] = "glsobstacle"
    fig, ax = plt.subplots(figsize=(6, 4.5))
    h = np.array([r.h for r in record.rows], dtype=float)
    series = [("err_l2", "L2 error", "o-"), ("err_h1", "H1 error", "s-"), ("estimator", "estimator E", "^--")]
    for key, label, style in series:
        vals = np.array([getattr(r, key) for r in record.rows], dtype=float)
        if len(vals):
            ax.loglog(h, vals, style, label=label, ms=4)
    for key in ("err_l2", "err_h1"):
        s = record.slopes.get(key)
        if s and len(h) >= 2:
            ax_y = getattr(record.rows[-1], key)
            _slope_triangle(ax, h[-1], ax_y, _nice_slope(s))
    ax.set_xlabel("h")
    ax.set_ylabel("error")
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", lw=0.3)
    if len(h):
        ax.legend(loc="best", fontsize=8)
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    finally:
        plt.close(fig)
    return path


def write_vtk(path, space: FeSpace, u, **cell_fields) -> Path:
    """Legacy ASCII VTK: linear triangles, ``u`` at vertices, per-cell scalars."""
    path = Path(path)
    mesh = space.mesh
    nv, nt = mesh.n_vertices, mesh.n_cells
    u = np.asarray(u, dtype=float)
    with _open(path) as fh:
        fh.write("# vtk DataFile Version 3.0\nobstacle solution\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {nv} double\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g} 0\n")
        fh.write(f"CELLS {nt} {4 * nt}\n")
        for a, b, c in mesh.cells:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {nt}\n")
        fh.write("5\n" * nt)
        fh.write(f"POINT_DATA {nv}\nSCALARS u double 1\nLOOKUP_TABLE default\n")
        # vertex nodes come first in the P2 numbering
        for v in u[:nv]:
            fh.write(f"{v:.17g}\n")
        if cell_fields:
            fh.write(f"CELL_DATA {nt}\n")
            for name, values in cell_fields.items():
                values = np.asarray(values, dtype=float)
                if values.shape != (nt,):
                    raise ValueError(f"cell field {name!r} has shape {values.shape}, expected ({nt},)")
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                for v in values:
                    fh.write(f"{v:.17g}\n")
    return path


def write_summary(record: StudyRecord, path) -> Path:
    path = Path(path)
    payload = {"slopes": record.slopes, "levels": record.extras}
    with _open(path) as fh:
        json.dump(payload, fh, indent=2, default=float)
        fh.write("\n")
    return path


def emit_outputs(record: StudyRecord, config: StudyConfig, out_dir) -> list[Path]:
    """Write CSV, SVG, summary and config echo into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    title = f"{config.case} ({config.mode})"
    return [
        write_csv(record, out / "convergence.csv"),
        write_plot(record, out / "convergence.svg", title),
        write_summary(record, out / "summary.json"),
        write_config(config, out / "config.txt"),
    ]
