import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esdiffuse import kernels
from esdiffuse import thermo as th
from esdiffuse.selfcheck import random_states, reference_mixture

MIX = reference_mixture()
compiled = pytest.mark.skipif("compiled" not in kernels.available_backends(),
                              reason="compiled extension not built")


def _batch(count=200, seed=0):
    states = random_states(MIX, count, seed)
    n = np.stack([s[0] for s in states], axis=1)
    T = np.array([s[1] for s in states])
    return n, T


def rel(a, b):
    return float(np.max(np.abs(np.asarray(a) - b)) / np.max(np.abs(b)))


def test_python_backend_matches_thermo():
    n, T = _batch()
    assert rel(kernels.free_energy(MIX, n, T, backend="python"), th.f_bulk(MIX, (n, T))) < 1e-14
    assert rel(kernels.entropy(MIX, n, T, backend="python"), th.s_bulk(MIX, (n, T))) < 1e-14
    assert rel(kernels.mu_part(MIX, n, T, 0.0, "convex", backend="python"),
               th.mu_bulk(MIX, (n, T), 0.0, "convex")) < 1e-14


@compiled
@pytest.mark.parametrize("fn", ["free_energy", "entropy", "internal_energy", "d2f_dT2"])
def test_scalar_kernels_agree(fn):
    n, T = _batch()
    a = getattr(kernels, fn)(MIX, n, T, backend="python")
    b = getattr(kernels, fn)(MIX, n, T, backend="compiled")
    assert rel(b, a) < 1e-12


@compiled
@pytest.mark.parametrize("theta", [0.0, 0.5])
@pytest.mark.parametrize("part", ["convex", "concave"])
def test_mu_and_hessian_agree(theta, part):
    n, T = _batch()
    n = np.minimum(n, 0.9 / MIX.b[:, None])
    for fn in (kernels.mu_part, kernels.hess_part):
        assert rel(fn(MIX, n, T, theta, part, backend="compiled"), fn(MIX, n, T, theta, part, backend="python")) < 1e-12


@compiled
def test_field_shapes_preserved():
    n = np.broadcast_to(np.array([7430.2, 673.6])[:, None, None], (2, 4, 3)).copy()
    T = np.full((4, 3), 310.0)
    assert kernels.free_energy(MIX, n, T, backend="compiled").shape == (4, 3)
    assert kernels.mu_part(MIX, n, T, 0.0, "convex", backend="compiled").shape == (2, 4, 3)
    assert kernels.hess_part(MIX, n, T, 0.0, "convex", backend="compiled").shape == (2, 2, 4, 3)


@compiled
def test_compiled_domain_error():
    n = np.array([[-1.0], [5.0]])
    with pytest.raises(th.ThermoDomainError):
        kernels.free_energy(MIX, n, np.array([310.0]), backend="compiled")


@pytest.mark.parametrize("backend", kernels.available_backends())
def test_recover_temperature(backend):
    n, T = _batch(100, seed=3)
    target = th.u_internal_bulk(MIX, (n, T))
    Tr, ok = kernels.recover_temperature(MIX, n, target, np.full_like(T, 300.0), 100.0, 1000.0, 1e-12,
                                         backend=backend)
    assert np.all(ok)
    assert np.abs(Tr - T).max() <= 1e-10 * T.max()


@pytest.mark.parametrize("backend", kernels.available_backends())
def test_recover_temperature_out_of_bounds(backend):
    n, T = _batch(4, seed=4)
    target = th.u_internal_bulk(MIX, (n, np.full_like(T, 2000.0)))
    _, ok = kernels.recover_temperature(MIX, n, target, np.full_like(T, 300.0), 100.0, 1000.0, 1e-12,
                                        backend=backend)
    assert not np.any(ok)


def test_pure_env_forces_python():
    env = dict(os.environ, ESDIFFUSE_PURE="1")
    out = subprocess.run([sys.executable, "-c", "import esdiffuse.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@compiled
@settings(max_examples=50, deadline=None)
@given(st.floats(10.0, 1.2e4), st.floats(10.0, 1.2e4), st.floats(250.0, 400.0))
def test_property_backends_agree(n1, n2, T):
    n = np.array([[n1], [n2]])
    if float(MIX.b @ n[:, 0]) >= 0.95:
        n *= 0.9 / float(MIX.b @ n[:, 0])
    T = np.array([T])
    for fn in (kernels.free_energy, kernels.entropy, kernels.internal_energy):
        a = fn(MIX, n, T, backend="python")
        assert abs(fn(MIX, n, T, backend="compiled") - a) <= 1e-12 * abs(a)
