"""Run orchestration and the EOS evaluation table."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from . import grid as G
from . import output
from . import thermo as th
from .config import RunConfig, emit_config
from .stepper import Problem, SimState, StepFailure, step

log = logging.getLogger(__name__)

CSV_NAME = "diagnostics.csv"
SNAP_DIR = "snapshots"


@dataclass
class RunResult:
    status: int
    records: list = field(default_factory=list)
    final_state: SimState | None = None
    message: str = ""


def initial_state(cfg: RunConfig) -> SimState:
    n, T = cfg.initial.build(cfg.mixture, cfg.grid)
    return SimState(n, T, G.FaceField.zeros(cfg.grid), 0.0)


def make_problem(cfg: RunConfig) -> Problem:
    return Problem(cfg.mixture, cfg.grid, cfg.transport, cfg.scheme)


def _write_snapshot(cfg, out, names, state, k):
    sdir = out / SNAP_DIR
    output.atomic_write(sdir / f"snap_{k:06d}.txt", output.format_snapshot(cfg.grid, names, state, k))
    if cfg.run.vtk:
        output.atomic_write(sdir / f"snap_{k:06d}.vtk", output.format_vtk(cfg.grid, names, state, k))


def run_simulation(cfg: RunConfig, out_dir) -> RunResult:
    """Advance the configured initial state and write diagnostics and snapshots.

    Returns status 0 on success and 2 when a step fails; in the failure case
    the diagnostics written so far are kept and a FAILED row is appended.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    output.atomic_write(out / "config.yaml", emit_config(cfg))
    prob = make_problem(cfg)
    names = [c.name for c in cfg.mixture.components]
    state = initial_state(cfg)
    comp = cfg.run.shape_component
    level = 0.5 * float(state.n[comp].min() + state.n[comp].max())
    records = [diag.record(prob, state, 0, level=level, component=comp)]
    output.atomic_write(out / CSV_NAME, output.format_csv(names, records))
    _write_snapshot(cfg, out, names, state, 0)
    every = cfg.run.snapshot_every
    for k in range(1, cfg.run.steps + 1):
        try:
            state, rep = step(prob, state)
        except StepFailure as exc:
            log.error("step %d failed: %s", k, exc)
            output.atomic_write(out / CSV_NAME, output.format_csv(names, records, (k, str(exc))))
            return RunResult(2, records, state, str(exc))
        rec = diag.record(prob, state, k, level=level, component=comp)
        records.append(rec)
        log.info("step %d: %d sweeps, S=%.12e, E=%.12e", k, rep.outer_iterations, rec.S_total, rec.E_total)
        output.atomic_write(out / CSV_NAME, output.format_csv(names, records))
        if (every and k % every == 0) or k == cfg.run.steps:
            _write_snapshot(cfg, out, names, state, k)
    return RunResult(0, records, state)


def eos_table(mix: th.Mixture, n, T, theta=0.0):
    """Rows ``(quantity, value, unit)`` of bulk properties at one state."""
    n = np.asarray(n, dtype=float)
    st = (n, float(T))
    rows = [
        ("f_ideal", float(th.f_bulk(mix, st, "ideal")), "J/m3"),
        ("f_repulsion", float(th.f_bulk(mix, st, "repulsion")), "J/m3"),
        ("f_attraction", float(th.f_bulk(mix, st, "attraction")), "J/m3"),
        ("f_bulk", float(th.f_bulk(mix, st)), "J/m3"),
    ]
    cvx, ccv = th.f_bulk_split(mix, st, theta)
    rows += [("f_convex", float(cvx), "J/m3"), ("f_concave", float(ccv), "J/m3")]
    mu = th.mu_bulk(mix, st)
    rows += [(f"mu[{c.name}]", float(v), "J/mol") for c, v in zip(mix.components, mu)]
    p = float(th.p_bulk(mix, st))
    f = float(th.f_bulk(mix, st))
    rows += [
        ("p", p, "Pa"),
        ("p_closed_form", float(th.pr_pressure(mix, n, T)), "Pa"),
        ("p - (sum n mu - f)", p - (float(n @ mu) - f), "Pa"),
        ("s", float(th.s_bulk(mix, st)), "J/(m3 K)"),
        ("internal_energy", float(th.u_internal_bulk(mix, st)), "J/m3"),
        ("d2f_dT2", float(th.d2f_dT2(mix, st)), "J/(m3 K2)"),
    ]
    return rows


def format_eos_table(rows) -> str:
    w = max(len(r[0]) for r in rows)
    return "\n".join(f"{name:<{w}}  {value: .17g}  {unit}" for name, value, unit in rows)
