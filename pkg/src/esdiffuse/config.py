"""Run configuration: YAML parsing with unit-suffixed quantities, validation, emission.

Physical quantities may be written as plain numbers (SI) or as strings with
a unit suffix, e.g. ``"6.8663 kmol/m3"``, ``"45.99 bar"``, ``"20 nm"``.
Validation errors carry the file name and line of the offending entry.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import thermo as th
from .grid import Grid2D
from .stepper import SchemeConfig
from .transport import MODELS, MobilitySpec

# unit tables, keyed by dimension; factors convert to SI
UNITS = {
    "temperature": {"K": 1.0},
    "pressure": {"Pa": 1.0, "kPa": 1e3, "MPa": 1e6, "bar": 1e5, "atm": 101325.0},
    "length": {"m": 1.0, "cm": 1e-2, "mm": 1e-3, "um": 1e-6, "nm": 1e-9},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9, "ps": 1e-12, "fs": 1e-15},
    "molar_density": {"mol/m3": 1.0, "kmol/m3": 1e3, "mol/L": 1e3, "mol/l": 1e3},
    "molar_mass": {"kg/mol": 1.0, "g/mol": 1e-3},
    "diffusivity": {"m2/s": 1.0, "cm2/s": 1e-4},
    "molar_energy": {"J/mol": 1.0, "kJ/mol": 1e3},
    "molar_entropy": {"J/(mol K)": 1.0, "J/mol/K": 1.0},
    "viscosity": {"Pa s": 1.0, "Pa*s": 1.0, "mPa s": 1e-3, "cP": 1e-3},
    "acceleration": {"m/s2": 1.0},
    "influence": {"J m5/mol2": 1.0},
    "conductivity_per_mole": {"W m2/(mol K)": 1.0},
    "dimensionless": {"": 1.0},
}

# unit written back by emit_config for each dimension
SI_UNIT = {
    "temperature": "K", "pressure": "Pa", "length": "m", "time": "s",
    "molar_density": "mol/m3", "molar_mass": "kg/mol", "diffusivity": "m2/s",
    "molar_energy": "J/mol", "molar_entropy": "J/(mol K)", "viscosity": "Pa s",
    "acceleration": "m/s2", "influence": "J m5/mol2", "conductivity_per_mole": "W m2/(mol K)",
}

_QTY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(.*?)\s*$")


class ConfigError(ValueError):
    """Invalid configuration; the message names file, line and entry."""


# ---------------------------------------------------------------------------
# YAML loading with line numbers


class _LocDict(dict):
    line = 0
    lines: dict = {}


class _LocList(list):
    line = 0
    lines: list = []


class _Loader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    out = _LocDict()
    out.line = node.start_mark.line + 1
    out.lines = {}
    for knode, vnode in node.value:
        key = loader.construct_object(knode, deep=True)
        if key in out:
            raise ConfigError(f"line {knode.start_mark.line + 1}: duplicate key {key!r}")
        out[key] = loader.construct_object(vnode, deep=True)
        out.lines[key] = vnode.start_mark.line + 1
    return out


def _construct_sequence(loader, node):
    out = _LocList(loader.construct_object(v, deep=True) for v in node.value)
    out.line = node.start_mark.line + 1
    out.lines = [v.start_mark.line + 1 for v in node.value]
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_sequence)


class _Ctx:
    """Error-reporting context: file name plus dotted path of the entry."""

    def __init__(self, source: str):
        self.source = source

    def error(self, container, key, path, msg):
        line = None
        if isinstance(container, _LocDict):
            line = container.lines.get(key, container.line)
        elif isinstance(container, _LocList) and isinstance(key, int) and key < len(container.lines):
            line = container.lines[key]
        where = f"{self.source}:{line}" if line else self.source
        return ConfigError(f"{where}: {path}: {msg}")

    def section(self, d, key, path, required=True):
        if key not in d:
            if required:
                raise self.error(d, key, path, f"missing required entry {key!r}")
            return None
        v = d[key]
        if not isinstance(v, dict):
            raise self.error(d, key, f"{path}.{key}" if path else key, "expected a mapping")
        return v

    def check_keys(self, d, allowed, path):
        for k in d:
            if k not in allowed:
                raise self.error(d, k, f"{path}.{k}" if path else str(k),
                                 f"unknown entry (allowed: {', '.join(sorted(allowed))})")


def parse_quantity(value, dimension: str) -> float:
    """Convert a plain number or ``"<number> <unit>"`` string to SI."""
    if isinstance(value, bool):
        raise ValueError("expected a number, got a boolean")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ValueError(f"expected a number or quantity string, got {type(value).__name__}")
    m = _QTY.match(value)
    if not m:
        raise ValueError(f"cannot parse quantity {value!r}")
    num, unit = float(m.group(1)), m.group(2)
    if unit == "":
        return num
    table = UNITS[dimension]
    if unit not in table:
        known = ", ".join(repr(u) for u in table)
        raise ValueError(f"unit {unit!r} not valid for {dimension.replace('_', ' ')} (use {known})")
    return num * table[unit]


def _qty(ctx, d, key, path, dimension, default=None):
    full = f"{path}.{key}" if path else key
    if key not in d:
        if default is None:
            raise ctx.error(d, key, full, "missing required entry")
        return float(default)
    try:
        return parse_quantity(d[key], dimension)
    except ValueError as exc:
        raise ctx.error(d, key, full, str(exc)) from None


def _int(ctx, d, key, path, default=None, minimum=None):
    full = f"{path}.{key}"
    if key not in d:
        if default is None:
            raise ctx.error(d, key, full, "missing required entry")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ctx.error(d, key, full, "expected an integer")
    if minimum is not None and v < minimum:
        raise ctx.error(d, key, full, f"must be >= {minimum}")
    return v


def _vector(ctx, d, key, path, dimension, length):
    full = f"{path}.{key}"
    if key not in d:
        raise ctx.error(d, key, full, "missing required entry")
    v = d[key]
    if not isinstance(v, list) or len(v) != length:
        raise ctx.error(d, key, full, f"expected a list of {length} values")
    out = []
    for i, item in enumerate(v):
        try:
            out.append(parse_quantity(item, dimension))
        except ValueError as exc:
            raise ctx.error(v, i, f"{full}[{i}]", str(exc)) from None
    return np.array(out)


def _matrix(ctx, d, key, path, dimension, M, default=None):
    full = f"{path}.{key}"
    if key not in d:
        if default is None:
            raise ctx.error(d, key, full, "missing required entry")
        return np.array(default, dtype=float)
    v = d[key]
    if not isinstance(v, list) or len(v) != M or not all(isinstance(r, list) and len(r) == M for r in v):
        raise ctx.error(d, key, full, f"expected a {M}x{M} nested list")
    out = np.zeros((M, M))
    for i, row in enumerate(v):
        for j, item in enumerate(row):
            try:
                out[i, j] = parse_quantity(item, dimension)
            except ValueError as exc:
                raise ctx.error(row, j, f"{full}[{i}][{j}]", str(exc)) from None
    return out


# ---------------------------------------------------------------------------
# config types


@dataclass(eq=False)
class InitialCondition:
    """Uniform temperature, zero velocity and either a rectangle of one
    composition inside another, or densities read from a snapshot file."""

    T: float
    inside: np.ndarray | None = None
    outside: np.ndarray | None = None
    rect: tuple[float, float, float, float] | None = None
    field_file: Path | None = None

    def build(self, mix: th.Mixture, g: Grid2D):
        """Return ``(n, T)`` cell fields."""
        if self.field_file is not None:
            from .output import read_snapshot

            snap = read_snapshot(self.field_file)
            if (snap["nx"], snap["ny"]) != (g.nx, g.ny):
                raise ConfigError(f"{self.field_file}: grid {snap['nx']}x{snap['ny']} does not match "
                                  f"configured {g.nx}x{g.ny}")
            n = np.stack([snap["fields"][f"n_{c.name}"] for c in mix.components])
            return n, np.full(g.shape, self.T)
        X, Y = g.centers()
        x0, x1, y0, y1 = self.rect
        inside = (X >= x0) & (X <= x1) & (Y >= y0) & (Y <= y1)
        n = np.where(inside, self.inside[:, None, None], self.outside[:, None, None])
        return n, np.full(g.shape, self.T)


@dataclass
class RunSettings:
    steps: int
    snapshot_every: int = 0
    vtk: bool = True
    shape_component: int = -1


@dataclass(eq=False)
class RunConfig:
    mixture: th.Mixture
    grid: Grid2D
    scheme: SchemeConfig
    transport: MobilitySpec
    initial: InitialCondition
    run: RunSettings
    extent: tuple[float, float] | None = None
    source: str = field(default="<memory>", compare=False)

    def __post_init__(self):
        if self.extent is None:
            self.extent = (self.grid.nx * self.grid.hx, self.grid.ny * self.grid.hy)

    def __eq__(self, other):
        if not isinstance(other, RunConfig):
            return NotImplemented
        return emit_config(self) == emit_config(other)


# ---------------------------------------------------------------------------
# parsing


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    return parse_config_text(text, str(path), base_dir=path.parent)


def parse_config_text(text: str, source="<string>", base_dir=None) -> RunConfig:
    try:
        data = yaml.load(text, Loader=_Loader)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"{where}: YAML syntax error: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    ctx = _Ctx(source)
    ctx.check_keys(data, {"mixture", "grid", "scheme", "transport", "initial", "run"}, "")
    mix = _parse_mixture(ctx, ctx.section(data, "mixture", ""))
    grid, extent = _parse_grid(ctx, ctx.section(data, "grid", ""))
    scheme = _parse_scheme(ctx, ctx.section(data, "scheme", ""))
    transport = _parse_transport(ctx, ctx.section(data, "transport", ""), mix.M)
    initial = _parse_initial(ctx, ctx.section(data, "initial", ""), mix, grid, base_dir)
    run = _parse_run(ctx, ctx.section(data, "run", ""), mix)
    return RunConfig(mix, grid, scheme, transport, initial, run, extent, source)


def _parse_component(ctx, c, path):
    if not isinstance(c, dict):
        raise ConfigError(f"{ctx.source}: {path}: expected a mapping")
    ctx.check_keys(c, {"name", "Tc", "Pc", "omega", "Mw", "cp_coeffs"}, path)
    name = c.get("name")
    if not isinstance(name, str) or not name:
        raise ctx.error(c, "name", f"{path}.name", "missing or empty component name")
    label = f"{path} ({name})"
    for key in ("Tc", "Pc", "omega", "Mw", "cp_coeffs"):
        if key not in c:
            raise ctx.error(c, key, label, f"component {name!r} is missing {key}")
    Tc = _qty(ctx, c, "Tc", label, "temperature")
    Pc = _qty(ctx, c, "Pc", label, "pressure")
    omega = _qty(ctx, c, "omega", label, "dimensionless")
    Mw = _qty(ctx, c, "Mw", label, "molar_mass")
    alpha = _vector(ctx, c, "cp_coeffs", label, "dimensionless", 4)
    try:
        return th.Component(name, Tc, Pc, omega, Mw, tuple(alpha))
    except ValueError as exc:
        raise ctx.error(c, "name", label, str(exc)) from None


def _parse_mixture(ctx, d):
    ctx.check_keys(d, {"components", "kij", "cij", "reference"}, "mixture")
    comps = d.get("components")
    if not isinstance(comps, list) or not comps:
        raise ctx.error(d, "components", "mixture.components", "expected a non-empty list")
    components = tuple(_parse_component(ctx, c, f"mixture.components[{i}]") for i, c in enumerate(comps))
    names = [c.name for c in components]
    if len(set(names)) != len(names):
        raise ctx.error(d, "components", "mixture.components", "component names must be unique")
    M = len(components)
    kij = _matrix(ctx, d, "kij", "mixture", "dimensionless", M, default=np.zeros((M, M)))
    cij = _matrix(ctx, d, "cij", "mixture", "influence", M)
    for i in range(M):
        for j in range(M):
            if kij[i, j] >= 1.0:
                raise ctx.error(d["kij"][i], j, f"mixture.kij[{i}][{j}]",
                                f"binary interaction coefficient {kij[i, j]} must be < 1")
    if not np.allclose(kij, kij.T, rtol=0, atol=1e-14):
        raise ctx.error(d, "kij", "mixture.kij", "matrix must be symmetric")
    if np.any(np.diag(kij) != 0):
        raise ctx.error(d, "kij", "mixture.kij", "diagonal entries must be zero")
    if not np.allclose(cij, cij.T, rtol=1e-12, atol=0):
        raise ctx.error(d, "cij", "mixture.cij", "matrix must be symmetric")
    ref = d.get("reference", {})
    if not isinstance(ref, dict):
        raise ctx.error(d, "reference", "mixture.reference", "expected a mapping")
    ctx.check_keys(ref, {"T0", "P0", "theta0", "s0"}, "mixture.reference")
    kw = dict(
        T0=_qty(ctx, ref, "T0", "mixture.reference", "temperature", 298.15),
        P0=_qty(ctx, ref, "P0", "mixture.reference", "pressure", 1e5),
        theta0=_qty(ctx, ref, "theta0", "mixture.reference", "molar_energy", -2478.95687512),
        s0=_qty(ctx, ref, "s0", "mixture.reference", "molar_entropy", 59.5827),
    )
    try:
        return th.Mixture(components, kij=kij, cij=cij, **kw)
    except ValueError as exc:
        raise ctx.error(d, "components", "mixture", str(exc)) from None


def _parse_grid(ctx, d):
    ctx.check_keys(d, {"nx", "ny", "Lx", "Ly", "bc"}, "grid")
    nx = _int(ctx, d, "nx", "grid", minimum=2)
    ny = _int(ctx, d, "ny", "grid", minimum=2)
    Lx = _qty(ctx, d, "Lx", "grid", "length")
    Ly = _qty(ctx, d, "Ly", "grid", "length")
    for key, v in (("Lx", Lx), ("Ly", Ly)):
        if not v > 0:
            raise ctx.error(d, key, f"grid.{key}", "must be positive")
    bc = d.get("bc", "neumann")
    if bc not in ("neumann", "periodic"):
        raise ctx.error(d, "bc", "grid.bc", "must be 'neumann' or 'periodic'")
    return Grid2D.from_extent(nx, ny, Lx, Ly, bc), (Lx, Ly)


def _parse_scheme(ctx, d):
    allowed = {"dt", "theta", "lambda", "eta", "gravity", "outer_tol", "outer_max",
               "inner_newton_tol", "inner_newton_max", "T_recovery_tol"}
    ctx.check_keys(d, allowed, "scheme")
    kw = dict(
        dt=_qty(ctx, d, "dt", "scheme", "time"),
        theta=_qty(ctx, d, "theta", "scheme", "dimensionless", 0.0),
        lam=_qty(ctx, d, "lambda", "scheme", "viscosity", 0.0),
        eta=_qty(ctx, d, "eta", "scheme", "viscosity", 0.0),
        gravity=_qty(ctx, d, "gravity", "scheme", "acceleration", 0.0),
        outer_tol=_qty(ctx, d, "outer_tol", "scheme", "dimensionless", 1e-10),
        outer_max=_int(ctx, d, "outer_max", "scheme", 50, minimum=1),
        inner_newton_tol=_qty(ctx, d, "inner_newton_tol", "scheme", "dimensionless", 1e-12),
        inner_newton_max=_int(ctx, d, "inner_newton_max", "scheme", 30, minimum=1),
        T_recovery_tol=_qty(ctx, d, "T_recovery_tol", "scheme", "dimensionless", 1e-12),
    )
    try:
        return SchemeConfig(**kw)
    except ValueError as exc:
        raise ctx.error(d, "dt", "scheme", str(exc)) from None


def _parse_transport(ctx, d, M):
    ctx.check_keys(d, {"model", "D", "kappa0"}, "transport")
    model = d.get("model")
    if model not in MODELS:
        raise ctx.error(d, "model", "transport.model", f"must be one of {', '.join(MODELS)}")
    D = _matrix(ctx, d, "D", "transport", "diffusivity", M)
    kappa0 = _qty(ctx, d, "kappa0", "transport", "conductivity_per_mole", 0.0)
    try:
        return MobilitySpec(model, D, kappa0)
    except ValueError as exc:
        raise ctx.error(d, "D", "transport", str(exc)) from None


def _parse_initial(ctx, d, mix, grid, base_dir):
    ctx.check_keys(d, {"T", "inside", "outside", "droplet", "field_file"}, "initial")
    T = _qty(ctx, d, "T", "initial", "temperature")
    if not T > 0:
        raise ctx.error(d, "T", "initial.T", "must be positive")
    if "field_file" in d:
        p = Path(d["field_file"])
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        return InitialCondition(T=T, field_file=p)
    inside = _vector(ctx, d, "inside", "initial", "molar_density", mix.M)
    outside = _vector(ctx, d, "outside", "initial", "molar_density", mix.M)
    for key, v in (("inside", inside), ("outside", outside)):
        if np.any(v <= 0):
            raise ctx.error(d, key, f"initial.{key}", "molar densities must be positive")
        if float(mix.b @ v) >= 1.0:
            raise ctx.error(d, key, f"initial.{key}", "state violates b*n < 1")
    drop = ctx.section(d, "droplet", "initial")
    ctx.check_keys(drop, {"x0", "x1", "y0", "y1"}, "initial.droplet")
    rect = tuple(_qty(ctx, drop, k, "initial.droplet", "length") for k in ("x0", "x1", "y0", "y1"))
    if not (rect[0] < rect[1] and rect[2] < rect[3]):
        raise ctx.error(d, "droplet", "initial.droplet", "need x0 < x1 and y0 < y1")
    return InitialCondition(T=T, inside=inside, outside=outside, rect=rect)


def _parse_run(ctx, d, mix):
    ctx.check_keys(d, {"steps", "snapshot_every", "vtk", "shape_component"}, "run")
    steps = _int(ctx, d, "steps", "run", minimum=0)
    every = _int(ctx, d, "snapshot_every", "run", 0, minimum=0)
    vtk = d.get("vtk", True)
    if not isinstance(vtk, bool):
        raise ctx.error(d, "vtk", "run.vtk", "expected true or false")
    comp = d.get("shape_component", mix.components[-1].name)
    names = [c.name for c in mix.components]
    if comp not in names:
        raise ctx.error(d, "shape_component", "run.shape_component",
                        f"unknown component {comp!r} (have {', '.join(names)})")
    return RunSettings(steps=steps, snapshot_every=every, vtk=vtk, shape_component=names.index(comp))


# ---------------------------------------------------------------------------
# emission


def _q(value, dimension):
    unit = SI_UNIT.get(dimension, "")
    r = repr(float(value))
    return f"{r} {unit}" if unit else float(value)


def config_to_dict(cfg: RunConfig) -> dict:
    mix, g, s, tr, ic, run = cfg.mixture, cfg.grid, cfg.scheme, cfg.transport, cfg.initial, cfg.run
    M = mix.M
    comps = [{
        "name": c.name, "Tc": _q(c.Tc, "temperature"), "Pc": _q(c.Pc, "pressure"),
        "omega": float(c.omega), "Mw": _q(c.Mw, "molar_mass"),
        "cp_coeffs": [float(a) for a in c.alpha],
    } for c in mix.components]
    out = {
        "mixture": {
            "components": comps,
            "kij": [[float(mix.kij[i, j]) for j in range(M)] for i in range(M)],
            "cij": [[_q(mix.cij[i, j], "influence") for j in range(M)] for i in range(M)],
            "reference": {"T0": _q(mix.T0, "temperature"), "P0": _q(mix.P0, "pressure"),
                          "theta0": _q(mix.theta0, "molar_energy"), "s0": _q(mix.s0, "molar_entropy")},
        },
        "grid": {"nx": g.nx, "ny": g.ny, "Lx": _q(cfg.extent[0], "length"),
                 "Ly": _q(cfg.extent[1], "length"), "bc": g.bc},
        "scheme": {"dt": _q(s.dt, "time"), "theta": float(s.theta), "lambda": _q(s.lam, "viscosity"),
                   "eta": _q(s.eta, "viscosity"), "gravity": _q(s.gravity, "acceleration"),
                   "outer_tol": float(s.outer_tol), "outer_max": s.outer_max,
                   "inner_newton_tol": float(s.inner_newton_tol), "inner_newton_max": s.inner_newton_max,
                   "T_recovery_tol": float(s.T_recovery_tol)},
        "transport": {"model": tr.model,
                      "D": [[_q(tr.D[i, j], "diffusivity") for j in range(M)] for i in range(M)],
                      "kappa0": _q(tr.kappa0, "conductivity_per_mole")},
        "run": {"steps": run.steps, "snapshot_every": run.snapshot_every, "vtk": run.vtk,
                "shape_component": mix.components[run.shape_component].name},
    }
    init = {"T": _q(ic.T, "temperature")}
    if ic.field_file is not None:
        init["field_file"] = str(ic.field_file)
    else:
        init["inside"] = [_q(v, "molar_density") for v in ic.inside]
        init["outside"] = [_q(v, "molar_density") for v in ic.outside]
        init["droplet"] = {k: _q(v, "length") for k, v in zip(("x0", "x1", "y0", "y1"), ic.rect)}
    out["initial"] = init
    return out


def emit_config(cfg: RunConfig) -> str:
    """YAML text that parses back to an equal configuration."""
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False, default_flow_style=None, width=100)


def bundled_config_path(name="example1") -> Path:
    return Path(__file__).with_name("data") / f"{name}.yaml"
