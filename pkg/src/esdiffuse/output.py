"""Snapshot, VTK and diagnostics-CSV writers.

Every file is written to a temporary sibling and renamed into place, so a
reader never sees a half-written file.  Floats are printed with 17
significant digits, which round-trips IEEE doubles exactly.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path

import numpy as np

from .grid import Grid2D

FMT = "%.17g"
SNAPSHOT_MAGIC = "# esdiffuse snapshot v1"


def atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    return FMT % x


def snapshot_fields(g: Grid2D, names, state):
    """Cell fields written to snapshots: densities, temperature, cell velocity."""
    fields = {f"n_{name}": state.n[i] for i, name in enumerate(names)}
    fields["T"] = state.T
    fields["u_x"] = 0.5 * (state.u.xcomp[1:, :] + state.u.xcomp[:-1, :])
    fields["u_y"] = 0.5 * (state.u.ycomp[:, 1:] + state.u.ycomp[:, :-1])
    return fields


def format_snapshot(g: Grid2D, names, state, step: int) -> str:
    """Plain-text snapshot: header, then one block per field in C (x-major) order.

    Face velocities are stored as well so a snapshot fully describes a state.
    """
    out = io.StringIO()
    out.write(f"{SNAPSHOT_MAGIC}\n")
    out.write(f"nx {g.nx}\nny {g.ny}\nhx {_fmt(g.hx)}\nhy {_fmt(g.hy)}\n")
    out.write(f"step {step}\nt {_fmt(state.t)}\n")
    blocks = dict(snapshot_fields(g, names, state))
    blocks["face_u_x"] = state.u.xcomp
    blocks["face_u_y"] = state.u.ycomp
    for name, arr in blocks.items():
        arr = np.asarray(arr)
        out.write(f"field {name} {arr.shape[0]} {arr.shape[1]}\n")
        out.write("\n".join(_fmt(v) for v in arr.ravel()))
        out.write("\n")
    return out.getvalue()


def read_snapshot(path) -> dict:
    """Parse a snapshot written by :func:`format_snapshot`."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a snapshot file")
    header = {}
    fields = {}
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        if parts and parts[0] == "field":
            name, a, b = parts[1], int(parts[2]), int(parts[3])
            vals = np.array([float(v) for v in lines[i + 1:i + 1 + a * b]])
            if vals.size != a * b:
                raise ValueError(f"{path}: field {name} is truncated")
            fields[name] = vals.reshape(a, b)
            i += 1 + a * b
            continue
        if len(parts) == 2:
            header[parts[0]] = parts[1]
        i += 1
    for key in ("nx", "ny", "hx", "hy", "step", "t"):
        if key not in header:
            raise ValueError(f"{path}: missing header entry {key!r}")
    return {"nx": int(header["nx"]), "ny": int(header["ny"]), "hx": float(header["hx"]),
            "hy": float(header["hy"]), "step": int(header["step"]), "t": float(header["t"]),
            "fields": fields}


def format_vtk(g: Grid2D, names, state, step: int) -> str:
    """Legacy ASCII VTK structured-points file with cell data."""
    f = snapshot_fields(g, names, state)
    out = io.StringIO()
    out.write("# vtk DataFile Version 3.0\n")
    out.write(f"esdiffuse step {step} t {_fmt(state.t)}\n")
    out.write("ASCII\nDATASET STRUCTURED_POINTS\n")
    out.write(f"DIMENSIONS {g.nx + 1} {g.ny + 1} 1\n")
    out.write("ORIGIN 0 0 0\n")
    out.write(f"SPACING {_fmt(g.hx)} {_fmt(g.hy)} 1\n")
    out.write(f"CELL_DATA {g.ncells}\n")
    for name, arr in f.items():
        if name in ("u_x", "u_y"):
            continue
        out.write(f"SCALARS {name.replace(' ', '_')} double 1\nLOOKUP_TABLE default\n")
        # VTK orders points with x varying fastest
        out.write("\n".join(_fmt(v) for v in np.asarray(arr).T.ravel()))
        out.write("\n")
    out.write("VECTORS velocity double\n")
    ux, uy = f["u_x"].T.ravel(), f["u_y"].T.ravel()
    out.write("\n".join(f"{_fmt(a)} {_fmt(b)} 0" for a, b in zip(ux, uy)))
    out.write("\n")
    return out.getvalue()


def csv_header(names):
    return ["step", "t", "S_total", "E_total"] + [f"moles_{n}" for n in names] + \
        ["kinetic", "max_u", "shape"]


def csv_row(rec):
    return [str(rec.step), _fmt(rec.t), _fmt(rec.S_total), _fmt(rec.E_total)] + \
        [_fmt(m) for m in rec.moles] + [_fmt(rec.kinetic), _fmt(rec.max_u), _fmt(rec.shape)]


def format_csv(names, records, failure=None) -> str:
    """Diagnostics table; ``failure = (step, message)`` appends a FAILED row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header(names))
    for rec in records:
        w.writerow(csv_row(rec))
    if failure is not None:
        step, msg = failure
        w.writerow(["FAILED", str(step), msg])
    return buf.getvalue()


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
