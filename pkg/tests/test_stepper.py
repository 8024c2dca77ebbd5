import numpy as np
import pytest

from esdiffuse import diagnostics as diag
from esdiffuse import grid as G
from esdiffuse import kernels
from esdiffuse import thermo as th
from esdiffuse.selfcheck import reference_mixture
from esdiffuse.stepper import (Problem, SchemeConfig, SimState, StepFailure, cell_total_energy,
                               chemical_potential_fields, density, energy_update, intermediate_velocity,
                               momentum_system, recover_temperature, solve_mass, solve_momentum, step)
from esdiffuse.transport import MobilitySpec, diffusion_fluxes, heat_flux

from conftest import GAS, LIQUID

MIX = reference_mixture()
D = 1e-8 * (1 - np.eye(2))


def make(nx=8, bc="neumann", model="J2", dt=1e-12, **kw):
    g = G.Grid2D.from_extent(nx, nx, nx * 0.5e-9, nx * 0.5e-9, bc)
    return Problem(MIX, g, MobilitySpec(model, D, 1e-3), SchemeConfig(dt=dt, **kw))


def uniform_state(g, n=GAS, T=310.0):
    return SimState(np.broadcast_to(n[:, None, None], (2,) + g.shape).copy(), np.full(g.shape, T),
                    G.FaceField.zeros(g))


def droplet_state(g):
    X, Y = g.centers()
    L = g.nx * g.hx
    inside = (X >= L / 4) & (X <= 3 * L / 4) & (Y >= L / 4) & (Y <= 3 * L / 4)
    n = np.where(inside, LIQUID[:, None, None], GAS[:, None, None])
    return SimState(n, np.full(g.shape, 310.0), G.FaceField.zeros(g))


def random_state(g, rng):
    n = rng.uniform(0.9, 1.1, size=(2,) + g.shape) * GAS[:, None, None]
    T = rng.uniform(305, 315, size=g.shape)
    u = G.enforce_bc(g, G.FaceField(rng.normal(size=(g.nx + 1, g.ny)), rng.normal(size=(g.nx, g.ny + 1))))
    return SimState(n, T, u)


# --- chemical potentials and predictor --------------------------------------


def test_mu_uniform_equals_bulk():
    prob = make()
    st = uniform_state(prob.grid)
    mu = chemical_potential_fields(prob, st.n, st.n, st.T)
    ref = th.mu_bulk(MIX, (GAS, 310.0))
    assert np.allclose(mu, ref[:, None, None], rtol=1e-14, atol=0)


def test_mu_gradient_part_is_negative_laplacian():
    one = th.Mixture(MIX.components[:1], kij=[[0.0]], cij=[[1.0]])
    g = G.Grid2D(5, 5, 0.1, 0.1)
    n = np.full((1,) + g.shape, 100.0)
    n[0, 2, 2] = 101.0
    bulk = kernels.mu_part(one, n, np.full(g.shape, 310.0), 0.0, "convex") + \
        kernels.mu_part(one, n, np.full(g.shape, 310.0), 0.0, "concave")
    prob = Problem(one, g, MobilitySpec("J1", [[0.0]]), SchemeConfig(dt=1.0))
    grad_part = chemical_potential_fields(prob, n, n, np.full(g.shape, 310.0)) - bulk
    assert grad_part[0, 2, 2] == pytest.approx(4 / 0.1**2, rel=1e-9)
    assert grad_part[0, 1, 2] == pytest.approx(-1 / 0.1**2, rel=1e-9)
    assert abs(grad_part[0, 0, 0]) < 1e-6


def test_mu_profile_matches_independent_assembly():
    prob = make(nx=12)
    g = prob.grid
    X, _ = g.centers()
    w = 0.5 * (1 + np.tanh((X - 3e-9) / 1e-9))
    n = GAS[:, None, None] + (LIQUID - GAS)[:, None, None] * w
    T = np.full(g.shape, 310.0)
    mu = chemical_potential_fields(prob, n, n, T)
    ref = th.mu_bulk(MIX, (n, T)) - G.div_c_grad(g, MIX.cij, n)
    assert np.abs(mu - ref).max() <= 1e-12 * np.abs(ref).max()


def test_ustar_uniform_is_u():
    prob = make()
    rng = np.random.default_rng(0)
    st = uniform_state(prob.grid)
    st.u = G.enforce_bc(prob.grid, G.FaceField(rng.normal(size=(9, 8)), rng.normal(size=(8, 9))))
    mu = chemical_potential_fields(prob, st.n, st.n, st.T)
    us = intermediate_velocity(prob, st, mu, st.T)
    assert np.allclose(us.flat(), st.u.flat(), rtol=1e-15, atol=0)


def test_ustar_single_face():
    prob = make()
    g = prob.grid
    st = uniform_state(g)
    mu = np.zeros((2,) + g.shape)
    mu[0, 4:, :] = 10.0
    us = intermediate_velocity(prob, st, mu, st.T)
    rho = float(density(MIX, GAS))
    expect = -prob.cfg.dt * GAS[0] / rho * 10.0 / g.hx
    assert us.xcomp[4, 3] == pytest.approx(expect, rel=1e-14)
    us.xcomp[4, :] = 0.0
    assert us.max_abs() == 0.0


def test_ustar_droplet_pinned(example_cfg):
    from esdiffuse.driver import initial_state, make_problem

    prob = make_problem(example_cfg)
    st = initial_state(example_cfg)
    mu = chemical_potential_fields(prob, st.n, st.n, st.T)
    us = intermediate_velocity(prob, st, mu, st.T)
    assert us.max_abs() == pytest.approx(351.91623683818307, rel=1e-10)
    assert np.sqrt((us.flat() ** 2).sum()) == pytest.approx(2658.2661878408135, rel=1e-10)


# --- mass and momentum -----------------------------------------------------------


def test_mass_unchanged_without_transport():
    prob = make()
    rng = np.random.default_rng(1)
    st = random_state(prob.grid, rng)
    z = G.FaceField.zeros(prob.grid, (2,))
    assert np.array_equal(solve_mass(prob, st.n, G.FaceField.zeros(prob.grid), z), st.n)


@pytest.mark.parametrize("bc", ["neumann", "periodic"])
def test_mass_conserved(bc):
    prob = make(bc=bc)
    g = prob.grid
    rng = np.random.default_rng(2)
    st = random_state(g, rng)
    J = G.enforce_bc(g, G.FaceField(rng.normal(size=(2, 9, 8)), rng.normal(size=(2, 8, 9))))
    n1 = solve_mass(prob, st.n, st.u, J)
    assert np.all(np.abs(G.integrate(g, n1) - G.integrate(g, st.n)) <= 1e-13 * G.integrate(g, st.n))


def test_uniform_density_under_divergence_free_advection():
    prob = make(bc="periodic")
    g = prob.grid
    st = uniform_state(g)
    u = G.FaceField(np.full((9, 8), 3.0), np.full((8, 9), -2.0))
    n1 = solve_mass(prob, st.n, u, G.FaceField.zeros(g, (2,)))
    assert np.abs(n1 - st.n).max() <= 1e-13 * st.n.max()


@pytest.mark.parametrize("bc", ["neumann", "periodic"])
def test_momentum_zero(bc):
    prob = make(bc=bc, lam=1e-4, eta=1e-4)
    st = uniform_state(prob.grid)
    u = solve_momentum(prob, G.FaceField.zeros(prob.grid), G.FaceField.zeros(prob.grid, (2,)), density(MIX, st.n))
    assert u.max_abs() == 0.0


def test_momentum_periodic_constant_advection():
    prob = make(bc="periodic")
    g = prob.grid
    st = uniform_state(g)
    us = G.FaceField(np.full((9, 8), 2.5), np.full((8, 9), -1.5))
    u = solve_momentum(prob, us, G.FaceField.zeros(g, (2,)), density(MIX, st.n))
    assert np.allclose(u.flat(), us.flat(), rtol=1e-12, atol=0)


@pytest.mark.parametrize("bc", ["neumann", "periodic"])
def test_momentum_residual(bc):
    prob = make(bc=bc, lam=2e-4, eta=1e-4)
    g = prob.grid
    rng = np.random.default_rng(3)
    st = random_state(g, rng)
    J = G.enforce_bc(g, G.FaceField(rng.normal(size=(2, 9, 8)) * 1e-3, rng.normal(size=(2, 8, 9)) * 1e-3))
    rho = density(MIX, st.n)
    A, rhs = momentum_system(prob, st.u, J, rho)
    u = solve_momentum(prob, st.u, J, rho)
    res = A @ u.flat() - rhs
    assert np.abs(res).max() <= 1e-11 * np.abs(rhs).max()


# --- energy and temperature --------------------------------------------------------


def test_recover_temperature_round_trip():
    prob = make()
    g = prob.grid
    rng = np.random.default_rng(4)
    st = random_state(g, rng)
    e = cell_total_energy(prob, st.n, st.T, st.u)
    T = recover_temperature(prob, e, st.n, st.u)
    assert np.abs(T - st.T).max() <= 1e-10 * st.T.max()


def test_recover_temperature_initial():
    prob = make()
    g = prob.grid
    st = uniform_state(g)
    e = th.u_internal_bulk(MIX, (st.n, st.T))
    assert np.allclose(recover_temperature(prob, e, st.n, st.u), 310.0, rtol=1e-12, atol=0)


def test_recover_temperature_monotone():
    prob = make()
    g = prob.grid
    st = uniform_state(g)
    e0 = cell_total_energy(prob, st.n, st.T, st.u)
    temps = [recover_temperature(prob, e0 + de, st.n, st.u)[0, 0] for de in (-1e5, 0.0, 1e5, 1e6)]
    assert all(a < b for a, b in zip(temps, temps[1:]))


def test_recover_temperature_failure():
    prob = make()
    st = uniform_state(prob.grid)
    e = cell_total_energy(prob, st.n, st.T, st.u) + 1e12
    with pytest.raises(StepFailure):
        recover_temperature(prob, e, st.n, st.u)


def _energy_inputs(prob, st, rng=None):
    g = prob.grid
    n1 = st.n if rng is None else st.n * rng.uniform(0.99, 1.01, size=st.n.shape)
    T1 = st.T if rng is None else st.T + rng.normal(size=g.shape)
    mu = chemical_potential_fields(prob, n1, st.n, T1)
    us = intermediate_velocity(prob, st, mu, T1)
    J = diffusion_fluxes(g, prob.mobility, MIX, st.n, st.T, mu, T1)
    q = heat_flux(g, prob.mobility, st.n, T1)
    u1 = solve_momentum(prob, us, J, density(MIX, st.n))
    return n1, T1, u1, us, mu, q, J


def test_energy_update_equilibrium():
    prob = make()
    st = uniform_state(prob.grid)
    e0 = cell_total_energy(prob, st.n, st.T, st.u)
    e1 = energy_update(prob, st, *_energy_inputs(prob, st))
    assert np.array_equal(e1, e0)


@pytest.mark.parametrize("bc", ["neumann", "periodic"])
def test_energy_update_conservative(bc):
    prob = make(bc=bc, lam=1e-4, eta=1e-4)
    g = prob.grid
    rng = np.random.default_rng(5)
    st = random_state(g, rng)
    e0 = cell_total_energy(prob, st.n, st.T, st.u)
    e1 = energy_update(prob, st, *_energy_inputs(prob, st, rng))
    assert abs(G.integrate(g, e1) - G.integrate(g, e0)) <= 1e-12 * abs(G.integrate(g, e0))


# --- full step ------------------------------------------------------------------


def test_fixed_point():
    prob = make()
    st = uniform_state(prob.grid)
    cur = st
    for _ in range(10):
        cur, rep = step(prob, cur)
        assert rep.converged
    assert np.abs(cur.n - st.n).max() <= 1e-12 * st.n.max()
    assert np.abs(cur.T - st.T).max() <= 1e-12 * 310.0
    assert cur.u.max_abs() <= 1e-12


def test_step_failure_when_not_converged():
    prob = make(outer_max=1)
    with pytest.raises(StepFailure) as info:
        step(prob, droplet_state(prob.grid))
    assert info.value.report is not None


def test_config_validation():
    with pytest.raises(ValueError):
        SchemeConfig(dt=0.0)
    with pytest.raises(ValueError):
        SchemeConfig(dt=1e-12, theta=-1.0)
    with pytest.raises(ValueError):
        SchemeConfig(dt=1e-12, eta=-1.0)


@pytest.mark.parametrize("bc,model,lam,eta,gravity", [
    ("periodic", "J2", 0.0, 0.0, 0.0),
    ("neumann", "J1", 0.0, 0.0, 0.0),
    ("neumann", "J2", 1e-4, 1e-4, 0.0),
    ("periodic", "J2", 1e-4, 1e-4, 0.0),
    ("neumann", "J2", 0.0, 0.0, 9.81),
])
def test_scheme_variants_conserve_and_dissipate(bc, model, lam, eta, gravity):
    prob = make(nx=16, bc=bc, model=model, lam=lam, eta=eta, gravity=gravity)
    g = prob.grid
    st = droplet_state(g)
    S = diag.total_entropy(MIX, g, st.n, st.T)
    E0 = diag.total_energy(prob, st)
    m0 = diag.species_totals(g, st.n)
    for _ in range(5):
        st, _ = step(prob, st)
        S1 = diag.total_entropy(MIX, g, st.n, st.T)
        assert S1 >= S - 1e-12 * abs(S)
        S = S1
    assert abs(diag.total_energy(prob, st) - E0) <= 1e-10 * abs(E0)
    assert np.all(np.abs(diag.species_totals(g, st.n) - m0) <= 1e-11 * m0)
    if gravity == 0.0:
        assert np.abs(st.n - st.n.transpose(0, 2, 1)).max() <= 1e-11 * st.n.max()


def test_droplet_first_step_pinned(droplet):
    st1 = droplet.states[1]
    e1 = cell_total_energy(droplet.prob, st1.n, st1.T, st1.u)
    assert float(e1.max()) == pytest.approx(-40655029.358255155, rel=1e-8)
    assert float(e1.min()) == pytest.approx(-148263391.75289935, rel=1e-8)
    assert st1.u.max_abs() == pytest.approx(38.27962018096922, rel=1e-6)
    assert float(st1.T.min()) == pytest.approx(309.55453090226274, rel=1e-9)


def test_droplet_steps_converge(droplet):
    tol = droplet.prob.cfg.outer_tol
    for rep in droplet.reports:
        assert rep.converged
        assert max(rep.residual_mass, rep.residual_energy, rep.residual_T) <= tol
