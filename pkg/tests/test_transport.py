import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esdiffuse import grid as G
from esdiffuse.selfcheck import reference_mixture
from esdiffuse.transport import MobilitySpec, diffusion_fluxes, entropy_production, heat_flux, mobility

MIX = reference_mixture()
D = np.array([[0.0, 1e-8], [1e-8, 0.0]])


def test_spec_validation():
    with pytest.raises(ValueError):
        MobilitySpec("J3", D)
    with pytest.raises(ValueError):
        MobilitySpec("J1", [[0.0, 1e-8], [2e-8, 0.0]])
    with pytest.raises(ValueError):
        MobilitySpec("J1", [[1.0, 1e-8], [1e-8, 0.0]])
    with pytest.raises(ValueError):
        MobilitySpec("J1", D, kappa0=-1.0)


def test_null_vectors(states100):
    for n, T in states100:
        L1 = mobility(MobilitySpec("J1", D), MIX, (n, T))
        L2 = mobility(MobilitySpec("J2", D), MIX, (n, T))
        assert np.abs(L1.sum(axis=1)).max() <= 1e-14 * np.abs(L1).max()
        assert np.abs(MIX.Mw @ L2).max() <= 1e-14 * np.abs(L2).max() * MIX.Mw.max()


@pytest.mark.parametrize("model", ["J1", "J2"])
def test_symmetric_psd(states100, model):
    for n, T in states100:
        L = mobility(MobilitySpec(model, D), MIX, (n, T))
        assert np.allclose(L, L.T, rtol=1e-14, atol=0)
        assert np.linalg.eigvalsh(L).min() >= -1e-14 * np.linalg.norm(L, 2)


def test_three_component_null_vector():
    from esdiffuse import thermo as th

    c3 = th.Component("ethane", 305.3, 48.72e5, 0.099, 30.07e-3, (5.4, 0.178, -6.9e-5, 8.7e-9))
    mix3 = th.Mixture(MIX.components + (c3,), kij=np.zeros((3, 3)), cij=np.eye(3) * 1e-20)
    D3 = np.array([[0, 1e-8, 2e-8], [1e-8, 0, 3e-8], [2e-8, 3e-8, 0]])
    n = np.array([5000.0, 1000.0, 2000.0])
    L = mobility(MobilitySpec("J2", D3), mix3, (n, 310.0))
    assert np.abs(mix3.Mw @ L).max() <= 1e-14 * np.abs(L).max()
    assert np.linalg.eigvalsh(L).min() >= -1e-14 * np.linalg.norm(L, 2)


def _fields(g, rng):
    n = rng.uniform(500, 7000, size=(2,) + g.shape)
    T = rng.uniform(300, 320, size=g.shape)
    mu = rng.normal(scale=1e3, size=(2,) + g.shape)
    return n, T, mu


def test_uniform_potentials_give_zero_flux():
    g = G.Grid2D(5, 5, 1e-9, 1e-9)
    rng = np.random.default_rng(0)
    n, _, _ = _fields(g, rng)
    T = np.full(g.shape, 310.0)
    mu = np.ones((2,) + g.shape) * np.array([-5e3, -1e4])[:, None, None]
    J = diffusion_fluxes(g, MobilitySpec("J2", D), MIX, n, T, mu, T)
    assert J.max_abs() == 0.0


@pytest.mark.parametrize("model,weights", [("J1", np.ones(2)), ("J2", MIX.Mw)])
def test_face_flux_identity(model, weights):
    rng = np.random.default_rng(1)
    g = G.Grid2D(6, 6, 1e-9, 1e-9)
    n, T, mu = _fields(g, rng)
    J = diffusion_fluxes(g, MobilitySpec(model, D), MIX, n, T, mu, T)
    total = (J * weights[:, None, None]).sum(axis=0)
    scale = max(np.abs(J.xcomp).max(), np.abs(J.ycomp).max()) * weights.max()
    assert total.max_abs() <= 1e-14 * scale


def test_heat_flux():
    g = G.Grid2D(6, 4, 0.5, 0.5)
    n = np.full((2,) + g.shape, 1000.0)
    spec = MobilitySpec("J1", D, kappa0=1e-3)
    assert heat_flux(g, spec, n, np.full(g.shape, 310.0)).max_abs() == 0.0
    X, _ = g.centers()
    q = heat_flux(g, spec, n, 300.0 + 2.0 * X)
    assert np.allclose(q.xcomp[1:-1], -1e-3 * 2000.0 * 2.0, rtol=1e-13)
    assert np.all(q.xcomp[0] == 0.0) and np.all(q.xcomp[-1] == 0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["J1", "J2"]))
def test_property_entropy_production_nonnegative(seed, model):
    rng = np.random.default_rng(seed)
    g = G.Grid2D(5, 5, 1e-9, 1e-9)
    n, T, mu = _fields(g, rng)
    spec = MobilitySpec(model, D, kappa0=1e-3)
    J = diffusion_fluxes(g, spec, MIX, n, T, mu, T)
    q = heat_flux(g, spec, n, T)
    assert G.face_inner(g, q, G.grad(g, 1.0 / T)) >= 0.0
    prod = entropy_production(g, q, J, mu, T)
    scale = abs(G.face_inner(g, q, G.grad(g, 1.0 / T))) + sum(
        abs(G.face_inner(g, J[i], G.grad(g, mu[i] / T))) for i in range(2))
    assert prod >= -1e-12 * scale
