import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esdiffuse.config import (ConfigError, bundled_config_path, emit_config, parse_config, parse_config_text,
                              parse_quantity)

TEXT = bundled_config_path().read_text()


def test_bundled_example(example_cfg):
    cfg = example_cfg
    assert cfg.initial.inside[0] == pytest.approx(6866.3, rel=1e-15)
    assert cfg.initial.inside[1] == pytest.approx(4791.5, rel=1e-15)
    assert np.allclose(cfg.initial.outside, [7430.2, 673.6], rtol=1e-15)
    assert (cfg.grid.nx, cfg.grid.ny, cfg.grid.bc) == (40, 40, "neumann")
    assert cfg.grid.hx == pytest.approx(0.5e-9, rel=1e-15)
    assert cfg.scheme.dt == 1e-12 and cfg.scheme.theta == 0.0 and cfg.scheme.gravity == 0.0
    assert cfg.scheme.lam == 0.0 and cfg.scheme.eta == 0.0
    assert cfg.transport.model == "J2" and cfg.transport.D[0, 1] == 1e-8 and cfg.transport.kappa0 == 1e-3
    assert cfg.run.steps == 60 and cfg.mixture.components[cfg.run.shape_component].name == "n-pentane"
    assert cfg.mixture.components[0].Pc == pytest.approx(45.99e5, rel=1e-15)
    assert cfg.mixture.kij[0, 1] == 0.041
    assert np.allclose(cfg.mixture.cij, np.array([[0.0282, 0.0462], [0.0462, 0.3019]]) * 1e-18, rtol=1e-15)
    assert cfg.initial.rect == pytest.approx((5e-9, 15e-9, 5e-9, 15e-9), rel=1e-15)


@pytest.mark.parametrize("value,dim,expect", [
    ("6.8663 kmol/m3", "molar_density", 6866.3),
    ("45.99 bar", "pressure", 45.99e5),
    ("20 nm", "length", 20e-9),
    ("1e-12", "time", 1e-12),
    (310, "temperature", 310.0),
    ("16.04 g/mol", "molar_mass", 16.04e-3),
])
def test_parse_quantity(value, dim, expect):
    assert parse_quantity(value, dim) == pytest.approx(expect, rel=1e-15)


def test_parse_quantity_rejects():
    with pytest.raises(ValueError):
        parse_quantity("20 furlongs", "length")
    with pytest.raises(ValueError):
        parse_quantity("abc", "length")


@pytest.mark.parametrize("old,new,fragment", [
    ("      Pc: 45.99 bar\n", "", "'methane' is missing Pc"),
    ("kij: [[0.0, 0.041], [0.041, 0.0]]", "kij: [[0.0, 1.2], [1.2, 0.0]]", "must be < 1"),
    ("kij: [[0.0, 0.041], [0.041, 0.0]]", "kij: [[0.0, 0.041], [0.05, 0.0]]", "symmetric"),
    ("nx: 40", "nx: forty", "grid.nx"),
    ("Lx: 20 nm", "Lx: 20 furlongs", "furlongs"),
    ("model: J2", "model: J7", "transport.model"),
    ("steps: 60", "steps: 60\n  bogus: 1", "bogus"),
    ("bc: neumann", "bc: [neumann", "YAML syntax error"),
])
def test_config_errors(old, new, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config_text(TEXT.replace(old, new), "case.yaml")
    msg = str(info.value)
    assert fragment in msg
    assert msg.startswith("case.yaml:")


def test_error_line_numbers():
    with pytest.raises(ConfigError) as info:
        parse_config_text(TEXT.replace("Lx: 20 nm", "Lx: 20 furlongs"), "case.yaml")
    line = next(i for i, s in enumerate(TEXT.splitlines(), 1) if s.strip().startswith("Lx:"))
    assert str(info.value).startswith(f"case.yaml:{line}:")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "nope.yaml")


def test_round_trip(example_cfg):
    again = parse_config_text(emit_config(example_cfg))
    assert again == example_cfg
    assert emit_config(again) == emit_config(example_cfg)


@settings(max_examples=30, deadline=None)
@given(nx=st.integers(2, 64), ny=st.integers(2, 64),
       Lx=st.floats(1e-9, 1e-6), dt=st.floats(1e-15, 1e-9),
       theta=st.floats(0.0, 2.0), k=st.floats(-0.5, 0.9),
       x0=st.floats(0.0, 0.4), T=st.floats(250.0, 400.0),
       bc=st.sampled_from(["neumann", "periodic"]))
def test_property_round_trip(nx, ny, Lx, dt, theta, k, x0, T, bc):
    text = (TEXT.replace("nx: 40", f"nx: {nx}").replace("ny: 40", f"ny: {ny}")
            .replace("Lx: 20 nm", f"Lx: {Lx!r} m").replace("dt: 1.0e-12 s", f"dt: {dt!r} s")
            .replace("theta: 0.0", f"theta: {theta!r}").replace("bc: neumann", f"bc: {bc}")
            .replace("kij: [[0.0, 0.041], [0.041, 0.0]]", f"kij: [[0.0, {k!r}], [{k!r}, 0.0]]")
            .replace("T: 310 K", f"T: {T!r} K")
            .replace("x0: 5 nm", f"x0: {x0 * Lx!r} m").replace("x1: 15 nm", f"x1: {0.9 * Lx!r} m"))
    cfg = parse_config_text(text)
    again = parse_config_text(emit_config(cfg))
    assert again == cfg
    assert again.grid == cfg.grid
    assert again.scheme.dt == dt and again.mixture.kij[0, 1] == k and again.initial.T == T
