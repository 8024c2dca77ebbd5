import json
import re

import numpy as np
import pytest

from esdiffuse import cli, output
from esdiffuse import thermo as th
from esdiffuse.config import bundled_config_path, parse_config, parse_config_text
from esdiffuse.driver import eos_table, run_simulation
from esdiffuse.selfcheck import reference_mixture, run_checks

EXAMPLE = str(bundled_config_path())
TEXT = bundled_config_path().read_text()
SMALL = (TEXT.replace("nx: 40", "nx: 10").replace("ny: 40", "ny: 10")
         .replace("Lx: 20 nm", "Lx: 5 nm").replace("Ly: 20 nm", "Ly: 5 nm")
         .replace("x0: 5 nm, x1: 15 nm, y0: 5 nm, y1: 15 nm", "x0: 1.25 nm, x1: 3.75 nm, y0: 1.25 nm, y1: 3.75 nm")
         .replace("steps: 60", "steps: 3").replace("snapshot_every: 10", "snapshot_every: 2"))


@pytest.fixture
def small_config(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(SMALL)
    return p


def test_simulate_outputs(small_config, tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["simulate", "--config", str(small_config), "--out", str(out)]) == 0
    assert "completed 3 steps" in capsys.readouterr().out
    header, rows = output.read_csv(out / "diagnostics.csv")
    assert header == output.csv_header(["methane", "n-pentane"])
    assert [r[0] for r in rows] == ["0", "1", "2", "3"]
    snaps = sorted(p.name for p in (out / "snapshots").iterdir())
    assert snaps == ["snap_000000.txt", "snap_000000.vtk", "snap_000002.txt", "snap_000002.vtk",
                     "snap_000003.txt", "snap_000003.vtk"]
    snap = output.read_snapshot(out / "snapshots" / "snap_000003.txt")
    assert (snap["nx"], snap["ny"], snap["step"]) == (10, 10, 3)
    assert snap["hx"] == pytest.approx(0.5e-9, rel=1e-15)
    assert snap["fields"]["n_methane"].shape == (10, 10)
    assert snap["fields"]["face_u_x"].shape == (11, 10)
    assert parse_config(out / "config.yaml") == parse_config(small_config)
    vtk = (out / "snapshots" / "snap_000003.vtk").read_text().splitlines()
    assert vtk[0].startswith("# vtk DataFile") and "DIMENSIONS 11 11 1" in vtk
    assert "CELL_DATA 100" in vtk and "VECTORS velocity double" in vtk


def test_simulate_deterministic(small_config, tmp_path):
    for name in ("a", "b"):
        assert cli.main(["simulate", "--config", str(small_config), "--out", str(tmp_path / name)]) == 0
    for rel in ("diagnostics.csv", "config.yaml", "snapshots/snap_000003.txt", "snapshots/snap_000003.vtk"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_zero_step_run(tmp_path):
    cfg = parse_config_text(SMALL.replace("steps: 3", "steps: 0"))
    res = run_simulation(cfg, tmp_path)
    assert res.status == 0 and len(res.records) == 1
    assert sorted(p.name for p in (tmp_path / "snapshots").iterdir()) == ["snap_000000.txt", "snap_000000.vtk"]


def test_snapshot_round_trip_and_field_file(tmp_path):
    cfg = parse_config_text(SMALL.replace("steps: 3", "steps: 1"))
    res = run_simulation(cfg, tmp_path / "first")
    snap_path = tmp_path / "first" / "snapshots" / "snap_000001.txt"
    snap = output.read_snapshot(snap_path)
    assert np.array_equal(snap["fields"]["T"], res.final_state.T)
    assert np.array_equal(snap["fields"]["face_u_y"], res.final_state.u.ycomp)
    text = SMALL.split("initial:")[0] + f"initial:\n  T: 310 K\n  field_file: {snap_path}\n" + \
        "run:" + SMALL.split("run:")[1]
    cfg2 = parse_config_text(text)
    n, T = cfg2.initial.build(cfg2.mixture, cfg2.grid)
    assert np.array_equal(n, res.final_state.n)


def test_solver_failure_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(SMALL.replace("outer_max: 50", "outer_max: 1"))
    assert cli.main(["simulate", "--config", str(p), "--out", str(tmp_path / "run")]) == 2
    assert "solver failure" in capsys.readouterr().err
    _, rows = output.read_csv(tmp_path / "run" / "diagnostics.csv")
    assert rows[0][0] == "0" and rows[-1][:2] == ["FAILED", "1"]


def test_config_error_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(TEXT.replace("      Pc: 45.99 bar\n", ""))
    assert cli.main(["simulate", "--config", str(p), "--out", str(tmp_path / "run")]) == 1
    assert "missing Pc" in capsys.readouterr().err


def test_usage_errors():
    for argv in ([], ["bogus"], ["simulate", "--config", "x.yaml"], ["eos", "--config", EXAMPLE]):
        with pytest.raises(SystemExit) as info:
            cli.main(argv)
        assert info.value.code == 1


def test_eos_command(capsys):
    assert cli.main(["eos", "--config", EXAMPLE, "--n", "7.4302 kmol/m3, 673.6", "--T", "310"]) == 0
    rows = {}
    for line in capsys.readouterr().out.splitlines():
        name, value, unit = re.split(r"\s{2,}", line.strip())
        rows[name] = (float(value), unit)
    assert rows["p"][1] == "Pa"
    assert rows["p"][0] == pytest.approx(rows["p_closed_form"][0], rel=1e-12)
    assert abs(rows["p - (sum n mu - f)"][0]) <= 1e-10 * rows["p"][0]
    for key in ("f_ideal", "f_repulsion", "f_attraction", "f_convex", "f_concave", "mu[methane]",
                "mu[n-pentane]", "s", "internal_energy", "d2f_dT2"):
        assert key in rows


def test_eos_identity_rows():
    mix = reference_mixture()
    n = np.array([7430.2, 673.6])
    rows = {r[0]: r[1] for r in eos_table(mix, n, 310.0)}
    assert abs(rows["p - (sum n mu - f)"]) <= 1e-10 * abs(rows["p"])
    ideal = mix.with_(a_scale=0.0)
    rows = {r[0]: r[1] for r in eos_table(ideal, n, mix.T0)}
    assert rows["internal_energy"] == pytest.approx(n.sum() * mix.theta0, rel=1e-14)


def test_eos_errors(capsys):
    assert cli.main(["eos", "--config", EXAMPLE, "--n", "1,2,3", "--T", "310"]) == 1
    assert cli.main(["eos", "--config", EXAMPLE, "--n=-5,2", "--T", "310"]) == 1
    assert "domain error" in capsys.readouterr().err
    assert cli.main(["eos", "--config", EXAMPLE, "--n", "5 furlongs,2", "--T", "310"]) == 1


def test_selfcheck_passes(capsys):
    assert cli.main(["selfcheck"]) == 0
    out = capsys.readouterr().out
    assert all(line.startswith("PASS") for line in out.splitlines())
    assert "thermo.temperature_concavity" in out and "samples=[" in out


def test_selfcheck_filter_and_json(capsys):
    assert cli.main(["selfcheck", "--filter", "grid", "--json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert [r["name"] for r in report] == ["grid.summation_by_parts"] and report[0]["passed"]
    assert cli.main(["selfcheck", "--filter", "nothing-matches"]) == 1


def test_selfcheck_detects_sign_error(monkeypatch, capsys):
    real = th.mu_bulk

    def flipped(mix, state, theta=0.0, part="total"):
        return -real(mix, state, theta, part)

    monkeypatch.setattr(th, "mu_bulk", flipped)
    res = {r.name: r for r in run_checks("thermo.mu_fd")}
    assert not res["thermo.mu_fd"].passed
    assert cli.main(["selfcheck", "--filter", "thermo.mu_fd"]) == 3
    assert capsys.readouterr().out.startswith("FAIL thermo.mu_fd")


def test_log_level_env(monkeypatch, small_config, tmp_path, capsys):
    import logging

    monkeypatch.setenv("ESDIFFUSE_LOG", "info")
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    root.handlers = []
    try:
        assert cli.main(["simulate", "--config", str(small_config), "--out", str(tmp_path / "r")]) == 0
        assert "INFO esdiffuse.driver: step 1" in capsys.readouterr().err
    finally:
        root.handlers = handlers
        root.setLevel(level)


def test_example_cli_run(tmp_path):
    """The bundled example through the CLI: 61 rows and nondecreasing entropy."""
    assert cli.main(["simulate", "--config", EXAMPLE, "--out", str(tmp_path)]) == 0
    header, rows = output.read_csv(tmp_path / "diagnostics.csv")
    assert len(rows) == 61
    S = np.array([float(r[header.index("S_total")]) for r in rows])
    assert np.all(np.diff(S) >= -1e-12 * np.abs(S[:-1]))
