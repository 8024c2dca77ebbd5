"""Entropy-stable semi-implicit time step for the diffuse-interface model.

One call to :func:`step` advances ``(n, T, u)`` by ``dt``.  The discrete
system couples

* chemical potentials, convex part implicit in ``n`` and concave part
  lagged, temperature implicit everywhere;
* diffusion and heat fluxes with lagged mobilities;
* an intermediate velocity driven by ``sum n grad mu + s grad T``;
* donor-cell mass balance, a linear momentum solve for ``u`` and a
  conservative total-energy balance from which ``T`` is recovered.

The coupled system is solved by block Gauss-Seidel sweeps: a Newton update
of the densities (capillary and pressure coupling implicit), an implicit
temperature update (heat conduction implicit), and the momentum solve.  When
the sweeps have converged the densities and the total energy are recomputed
from the conservative update formulas, so mass and energy are conserved to
round-off, and the temperature is recovered cell by cell from the energy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import grid as G
from . import kernels
from . import thermo as th
from .transport import MobilitySpec, conductivity, mobility

log = logging.getLogger(__name__)

T_MIN = 100.0
T_MAX = 1000.0


class StepFailure(RuntimeError):
    """The coupled solve did not produce an admissible converged state."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass
class SchemeConfig:
    dt: float
    theta: float = 0.0
    lam: float = 0.0
    eta: float = 0.0
    gravity: float = 0.0
    outer_tol: float = 1e-10
    outer_max: int = 50
    inner_newton_tol: float = 1e-12
    inner_newton_max: int = 30
    T_recovery_tol: float = 1e-12

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.theta < 0:
            raise ValueError("theta must be >= 0")
        if self.lam < 0 or self.eta < 0:
            raise ValueError("viscosities must be >= 0")
        if self.gravity < 0:
            raise ValueError("gravity must be >= 0")


@dataclass
class SimState:
    n: np.ndarray
    T: np.ndarray
    u: G.FaceField
    t: float = 0.0

    def copy(self):
        return SimState(self.n.copy(), self.T.copy(), self.u.copy(), self.t)


@dataclass
class StepReport:
    outer_iterations: int
    residual_mass: float
    residual_energy: float
    residual_T: float
    converged: bool
    history: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


@dataclass(eq=False)
class Problem:
    """Everything a time step needs besides the state."""

    mix: th.Mixture
    grid: G.Grid2D
    mobility: MobilitySpec
    cfg: SchemeConfig

    def __post_init__(self):
        if self.mobility.D.shape[0] != self.mix.M:
            raise ValueError("mobility and mixture have different component counts")

    @property
    def gh(self):
        """Gravitational potential per unit mass, ``g * y`` at cell centres."""
        if self.cfg.gravity == 0.0:
            return None
        _, Y = self.grid.centers()
        return self.cfg.gravity * Y


# ---------------------------------------------------------------------------
# field-level building blocks


def density(mix, n):
    return np.tensordot(mix.Mw, n, axes=1)


def gradient_energy(g, cij, n):
    """Cell values of ``0.5 sum_ij c_ij grad n_i . grad n_j``."""
    gn = G.grad(g, n)
    M = n.shape[0]
    out = np.zeros(n.shape[1:])
    for i in range(M):
        for j in range(M):
            if cij[i, j] != 0.0:
                out += 0.5 * cij[i, j] * G.face_to_cell_dot(g, gn[i], gn[j])
    return out


def kinetic_energy(g, rho, u: G.FaceField):
    """Cell kinetic energy density; integrates to ``0.5 sum_faces rho_face u^2``."""
    return 0.5 * rho * G.face_to_cell_sq(g, u)


def cell_total_energy(prob: Problem, n, T, u, rho=None):
    """Total energy density ``f + T s + 0.5 rho |u|^2 + rho g h`` per cell."""
    mix, g = prob.mix, prob.grid
    if rho is None:
        rho = density(mix, n)
    e = kernels.internal_energy(mix, n, T) + gradient_energy(g, mix.cij, n) + kinetic_energy(g, rho, u)
    gh = prob.gh
    if gh is not None:
        e = e + rho * gh
    return e


def chemical_potential_fields(prob: Problem, n_new, n_old, T_new):
    """Discrete chemical potentials: convex part at ``n_new``, concave at ``n_old``."""
    mix, g, theta = prob.mix, prob.grid, prob.cfg.theta
    mu_cvx = kernels.mu_part(mix, n_new, T_new, theta, "convex")
    mu_ccv = kernels.mu_part(mix, n_old, T_new, theta, "concave")
    return mu_cvx + mu_ccv - G.div_c_grad(g, mix.cij, n_new)


def intermediate_velocity(prob: Problem, state_old: SimState, mu_new, T_new, s_old=None,
                          faces=None):
    """Predictor velocity ``u* = u - dt/rho (sum n grad mu + s grad T - rho g)``."""
    g, mix, dt = prob.grid, prob.mix, prob.cfg.dt
    if faces is None:
        faces = _lagged_faces(prob, state_old, s_old)
    gmu = G.grad(g, mu_new)
    force = (faces["n"] * gmu).sum(axis=0) + faces["s"] * G.grad(g, T_new)
    ustar = state_old.u - dt * (force * faces["inv_rho"])
    gh = prob.gh
    if gh is not None:
        ustar = ustar - dt * G.grad(g, gh)
    return G.enforce_bc(g, ustar)


def solve_mass(prob: Problem, n_old, u_star, J_new):
    """Conservative donor-cell mass update."""
    g, dt = prob.grid, prob.cfg.dt
    return n_old - dt * (G.upwind_div(g, u_star, n_old) + G.div(g, J_new))


def _lagged_faces(prob, state_old, s_old=None):
    g, mix = prob.grid, prob.mix
    n = state_old.n
    rho = density(mix, n)
    if s_old is None:
        s_old = kernels.entropy(mix, n, state_old.T)
    rho_f = G.cell_to_face(g, rho)
    return {
        "rho": rho_f,
        "inv_rho": G.FaceField(1.0 / rho_f.xcomp, 1.0 / rho_f.ycomp),
        "n": G.cell_to_face(g, n),
        "s": G.cell_to_face(g, s_old),
    }


# ---------------------------------------------------------------------------
# momentum


def _interp_y_to_x(g, vy):
    """Average y-face values onto x-faces (interior x-faces; wrap if periodic)."""
    out = np.zeros((g.nx + 1, g.ny))
    avg = 0.5 * (vy[:, :-1] + vy[:, 1:])  # cell-centred, (nx, ny)
    out[1:-1, :] = 0.5 * (avg[:-1, :] + avg[1:, :])
    if g.periodic:
        out[0, :] = out[-1, :] = 0.5 * (avg[0, :] + avg[-1, :])
    return out


def _interp_x_to_y(g, vx):
    out = np.zeros((g.nx, g.ny + 1))
    avg = 0.5 * (vx[:-1, :] + vx[1:, :])
    out[:, 1:-1] = 0.5 * (avg[:, :-1] + avg[:, 1:])
    if g.periodic:
        out[:, 0] = out[:, -1] = 0.5 * (avg[:, 0] + avg[:, -1])
    return out


def face_speed_sq(g, u: G.FaceField) -> G.FaceField:
    """|u|^2 on faces, the tangential component interpolated from neighbours."""
    return G.FaceField(u.xcomp**2 + _interp_y_to_x(g, u.ycomp) ** 2,
                       u.ycomp**2 + _interp_x_to_y(g, u.xcomp) ** 2)


def _face_index(g):
    xf = np.arange(g.nxfaces).reshape(g.nx + 1, g.ny)
    yf = g.nxfaces + np.arange(g.nyfaces).reshape(g.nx, g.ny + 1)
    return xf, yf


def _advection_matrix(g, wx_on_x, wy_on_x, wx_on_y, wy_on_y):
    """Donor-cell ``w . grad`` acting on both MAC velocity components."""
    xf, yf = _face_index(g)
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r.ravel()); cols.append(c.ravel()); vals.append(v.ravel())

    def upwind(idx, w, axis, h, ncomp, lo_ok, hi_ok, wrap):
        # idx: (a, b) face index array of one component; derivative along axis
        n_along = idx.shape[axis]
        pos = np.arange(n_along)
        shape = [1, 1]; shape[axis] = n_along
        pos = pos.reshape(shape)
        prev_pos = pos - 1
        next_pos = pos + 1
        if wrap:
            prev_pos = prev_pos % ncomp
            next_pos = next_pos % ncomp
        prev_valid = np.ones_like(pos, dtype=bool) if wrap else (prev_pos >= 0)
        next_valid = np.ones_like(pos, dtype=bool) if wrap else (next_pos < n_along)
        prev_pos = np.clip(prev_pos, 0, n_along - 1)
        next_pos = np.clip(next_pos, 0, n_along - 1)
        prev_idx = np.take_along_axis(idx, np.broadcast_to(prev_pos, idx.shape), axis=axis)
        next_idx = np.take_along_axis(idx, np.broadcast_to(next_pos, idx.shape), axis=axis)
        pv = np.broadcast_to(prev_valid, idx.shape)
        nv = np.broadcast_to(next_valid, idx.shape)
        wpos = np.where(w > 0, w, 0.0) / h
        wneg = np.where(w < 0, w, 0.0) / h
        # positive: w (u_i - u_{i-1}); missing neighbour (free-slip wall) -> zero gradient
        add(idx, idx, np.where(pv, wpos, 0.0))
        add(idx[pv], prev_idx[pv], -wpos[pv])
        # negative: w (u_{i+1} - u_i)
        add(idx, idx, np.where(nv, -wneg, 0.0))
        add(idx[nv], next_idx[nv], wneg[nv])

    px = g.periodic
    # x-velocity: along x neighbours are faces, boundary faces are Dirichlet rows
    upwind(xf, wx_on_x, 0, g.hx, g.nx, True, True, px)
    upwind(xf, wy_on_x, 1, g.hy, g.ny, True, True, px)
    upwind(yf, wx_on_y, 0, g.hx, g.nx, True, True, px)
    upwind(yf, wy_on_y, 1, g.hy, g.ny, True, True, px)
    nf = g.nxfaces + g.nyfaces
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(nf, nf))


def _node_shear_matrix(g):
    """Faces -> nodes: ``du_x/dy + du_y/dx`` at cell corners (zero on closed walls)."""
    xf, yf = _face_index(g)
    nn = (g.nx + 1) * (g.ny + 1)
    nodes = np.arange(nn).reshape(g.nx + 1, g.ny + 1)
    rows, cols, vals = [], [], []
    if g.periodic:
        I, Jn = np.meshgrid(np.arange(g.nx + 1), np.arange(g.ny + 1), indexing="ij")
        jm = (Jn - 1) % g.ny
        jp = Jn % g.ny
        im = (I - 1) % g.nx
        ip = I % g.nx
        xI = I % g.nx
        yJ = Jn % g.ny
        r = nodes.ravel()
        rows += [r, r, r, r]
        cols += [xf[xI, jp].ravel(), xf[xI, jm].ravel(), yf[ip, yJ].ravel(), yf[im, yJ].ravel()]
        vals += [np.full(r.size, 1 / g.hy), np.full(r.size, -1 / g.hy),
                 np.full(r.size, 1 / g.hx), np.full(r.size, -1 / g.hx)]
    else:
        I, Jn = np.meshgrid(np.arange(1, g.nx), np.arange(1, g.ny), indexing="ij")
        r = nodes[1:-1, 1:-1].ravel()
        rows += [r, r, r, r]
        cols += [xf[I, Jn].ravel(), xf[I, Jn - 1].ravel(), yf[I, Jn].ravel(), yf[I - 1, Jn].ravel()]
        vals += [np.full(r.size, 1 / g.hy), np.full(r.size, -1 / g.hy),
                 np.full(r.size, 1 / g.hx), np.full(r.size, -1 / g.hx)]
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(nn, g.nxfaces + g.nyfaces))


def _node_to_face_diff(g):
    """Nodes -> faces: d/dy of node values on x-faces, d/dx on y-faces."""
    xf, yf = _face_index(g)
    nodes = np.arange((g.nx + 1) * (g.ny + 1)).reshape(g.nx + 1, g.ny + 1)
    rows = [xf.ravel(), xf.ravel(), yf.ravel(), yf.ravel()]
    cols = [nodes[:, 1:].ravel(), nodes[:, :-1].ravel(), nodes[1:, :].ravel(), nodes[:-1, :].ravel()]
    vals = [np.full(xf.size, 1 / g.hy), np.full(xf.size, -1 / g.hy),
            np.full(yf.size, 1 / g.hx), np.full(yf.size, -1 / g.hx)]
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(g.nxfaces + g.nyfaces, (g.nx + 1) * (g.ny + 1)))


def _node_to_face_avg(g):
    xf, yf = _face_index(g)
    nodes = np.arange((g.nx + 1) * (g.ny + 1)).reshape(g.nx + 1, g.ny + 1)
    rows = [xf.ravel(), xf.ravel(), yf.ravel(), yf.ravel()]
    cols = [nodes[:, 1:].ravel(), nodes[:, :-1].ravel(), nodes[1:, :].ravel(), nodes[:-1, :].ravel()]
    vals = [np.full(xf.size, 0.5)] * 2 + [np.full(yf.size, 0.5)] * 2
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(g.nxfaces + g.nyfaces, (g.nx + 1) * (g.ny + 1)))


def _stress_operators(g, lam, eta):
    """Sparse maps from face velocities to stresses and to ``div tau`` on faces."""
    D = g.div_matrix
    nxf = g.nxfaces
    Dxx = D[:, :nxf]
    Dyy = D[:, nxf:]
    # strain components: cell normal strains, node shear
    zx = sp.csr_matrix((g.ncells, g.nyfaces))
    zy = sp.csr_matrix((g.ncells, g.nxfaces))
    Exx = sp.hstack([Dxx, zx]).tocsr()
    Eyy = sp.hstack([zy, Dyy]).tocsr()
    S = _node_shear_matrix(g)
    tau_xx = lam * D + 2.0 * eta * Exx
    tau_yy = lam * D + 2.0 * eta * Eyy
    tau_xy = eta * S
    Gm = g.grad_matrix
    # div tau: x-faces get d/dx tau_xx + d/dy tau_xy; y-faces d/dx tau_xy + d/dy tau_yy
    Gx = Gm[:nxf, :]
    Gy = Gm[nxf:, :]
    N = _node_to_face_diff(g)
    divtau = sp.vstack([Gx @ tau_xx + N[:nxf] @ tau_xy, Gy @ tau_yy + N[nxf:] @ tau_xy]).tocsr()
    return {"xx": tau_xx.tocsr(), "yy": tau_yy.tocsr(), "xy": tau_xy.tocsr(), "div": divtau}


def _dirichlet_rows(g):
    """Face indices fixed by the boundary condition and the faces they mirror."""
    xf, yf = _face_index(g)
    if g.periodic:
        fixed = np.concatenate([xf[-1, :], yf[:, -1]])
        mirror = np.concatenate([xf[0, :], yf[:, 0]])
    else:
        fixed = np.concatenate([xf[0, :], xf[-1, :], yf[:, 0], yf[:, -1]])
        mirror = None
    return fixed, mirror


def momentum_system(prob: Problem, u_star: G.FaceField, J_new: G.FaceField, rho_old):
    """Matrix and right-hand side of the linearised momentum balance."""
    g, mix, cfg = prob.grid, prob.mix, prob.cfg
    dt = cfg.dt
    rho_f = G.cell_to_face(g, rho_old)
    mflux = (J_new * mix.Mw[:, None, None]).sum(axis=0)
    # advecting mass flux w = rho u* + sum Mw J, both components on each face family
    wx_on_x = rho_f.xcomp * u_star.xcomp + mflux.xcomp
    wy_on_y = rho_f.ycomp * u_star.ycomp + mflux.ycomp
    wy_on_x = rho_f.xcomp * _interp_y_to_x(g, u_star.ycomp) + _interp_y_to_x(g, mflux.ycomp)
    wx_on_y = rho_f.ycomp * _interp_x_to_y(g, u_star.xcomp) + _interp_x_to_y(g, mflux.xcomp)
    A_adv = _advection_matrix(g, wx_on_x, wy_on_x, wx_on_y, wy_on_y)
    rho_flat = rho_f.flat()
    A = sp.diags(rho_flat / dt) + A_adv
    if cfg.lam > 0 or cfg.eta > 0:
        A = A - _stress_operators(g, cfg.lam, cfg.eta)["div"]
    rhs = rho_flat * u_star.flat() / dt
    fixed, mirror = _dirichlet_rows(g)
    # constraint rows carry the interior diagonal scale to keep A well conditioned
    d = float(np.mean(rho_flat)) / dt
    nf = rho_flat.size
    keep = np.ones(nf)
    keep[fixed] = 0.0
    if mirror is None:
        C = sp.csr_matrix((np.full(fixed.size, d), (fixed, fixed)), shape=(nf, nf))
    else:
        C = sp.csr_matrix((np.concatenate([np.full(fixed.size, d), np.full(fixed.size, -d)]),
                           (np.concatenate([fixed, fixed]), np.concatenate([fixed, mirror]))),
                          shape=(nf, nf))
    A = sp.diags(keep) @ A + C
    rhs[fixed] = 0.0
    return A.tocsr(), rhs


def solve_momentum(prob: Problem, u_star: G.FaceField, J_new: G.FaceField, rho_old) -> G.FaceField:
    """Solve the linear momentum balance for ``u^{k+1}``."""
    A, rhs = momentum_system(prob, u_star, J_new, rho_old)
    u = spla.spsolve(A.tocsc(), rhs)
    if not np.all(np.isfinite(u)):
        raise StepFailure("momentum solve produced non-finite velocities")
    return G.enforce_bc(prob.grid, G.FaceField.from_flat(prob.grid, u))


def stress_flux(prob: Problem, u: G.FaceField) -> G.FaceField:
    """Face values of ``tau . u`` (zero for an inviscid fluid)."""
    g, cfg = prob.grid, prob.cfg
    if cfg.lam == 0 and cfg.eta == 0:
        return G.FaceField.zeros(g)
    ops = _stress_operators(g, cfg.lam, cfg.eta)
    v = u.flat()
    txx = (ops["xx"] @ v).reshape(g.shape)
    tyy = (ops["yy"] @ v).reshape(g.shape)
    txy_faces = G.FaceField.from_flat(g, _node_to_face_avg(g) @ (ops["xy"] @ v))
    txx_f = G.cell_to_face(g, txx)
    tyy_f = G.cell_to_face(g, tyy)
    Fx = txx_f.xcomp * u.xcomp + txy_faces.xcomp * _interp_y_to_x(g, u.ycomp)
    Fy = tyy_f.ycomp * u.ycomp + txy_faces.ycomp * _interp_x_to_y(g, u.xcomp)
    return G.enforce_bc(g, G.FaceField(Fx, Fy))


# ---------------------------------------------------------------------------
# energy


def recover_temperature(prob: Problem, e_t_new, n_new, u_new, rho_new=None, T_guess=None,
                        f_grad=None):
    """Invert the cell total energy for the temperature.

    Solves ``u_b(n, T) = e_t - f_grad - 0.5 rho |u|^2 - rho g h`` per cell.
    """
    mix, g = prob.mix, prob.grid
    if rho_new is None:
        rho_new = density(mix, n_new)
    if f_grad is None:
        f_grad = gradient_energy(g, mix.cij, n_new)
    target = e_t_new - f_grad - kinetic_energy(g, rho_new, u_new)
    gh = prob.gh
    if gh is not None:
        target = target - rho_new * gh
    if T_guess is None:
        T_guess = np.full(target.shape, 300.0)
    T, ok = kernels.recover_temperature(mix, n_new, target, T_guess, T_MIN, T_MAX,
                                        prob.cfg.T_recovery_tol)
    if not np.all(ok):
        raise StepFailure(f"temperature recovery failed in {int((~ok).sum())} cells")
    return T


def energy_flux(prob: Problem, state_old: SimState, n_new, T_new, u_new, u_star, mu_new, q_new,
                J_new, s_old, rho_old=None):
    """Total face flux in the discrete energy balance."""
    g, mix, dt = prob.grid, prob.mix, prob.cfg.dt
    n_old = state_old.n
    if rho_old is None:
        rho_old = density(mix, n_old)
    f_grad = gradient_energy(g, mix.cij, n_new)
    f_new = kernels.free_energy(mix, n_new, T_new) + f_grad
    e_star = f_new + T_new * s_old + kinetic_energy(g, rho_old, u_new)
    gh = prob.gh
    if gh is not None:
        e_star = e_star + rho_old * gh
    p_new = (n_old * mu_new).sum(axis=0) - f_new
    F = G.upwind_flux(g, u_star, e_star + p_new)
    F = F - stress_flux(prob, u_new) + q_new
    # pi = sum_ij c_ij (dn_i/dt) grad n_j - 0.5 sum_i Mw_i |u|^2 J_i
    dn_f = G.cell_to_face(g, (n_new - n_old) / dt)
    gn = G.grad(g, n_new)
    cg = G.FaceField(np.einsum("ij,j...->i...", mix.cij, gn.xcomp),
                     np.einsum("ij,j...->i...", mix.cij, gn.ycomp))
    pi = (dn_f * cg).sum(axis=0)
    mflux = (J_new * mix.Mw[:, None, None]).sum(axis=0)
    pi = pi - 0.5 * face_speed_sq(g, u_new) * mflux
    return G.enforce_bc(g, F - pi)


def energy_update(prob: Problem, state_old: SimState, n_new, T_new, u_new, u_star, mu_new, q_new,
                  J_new, s_old=None, e_old=None):
    """Conservative total-energy update, returns the cell field ``e_t^{k+1}``."""
    mix = prob.mix
    if s_old is None:
        s_old = kernels.entropy(mix, state_old.n, state_old.T)
    if e_old is None:
        e_old = cell_total_energy(prob, state_old.n, state_old.T, state_old.u)
    F = energy_flux(prob, state_old, n_new, T_new, u_new, u_star, mu_new, q_new, J_new, s_old)
    return e_old - prob.cfg.dt * G.div(prob.grid, F)


# ---------------------------------------------------------------------------
# coupled solve


class _StepSolver:
    """Per-step workspace holding lagged quantities and operator matrices."""

    def __init__(self, prob: Problem, state: SimState):
        self.prob = prob
        self.old = state
        g, mix = prob.grid, prob.mix
        self.g = g
        self.mix = mix
        self.dt = prob.cfg.dt
        self.M = mix.M
        n, T = state.n, state.T
        self.rho_old = density(mix, n)
        self.s_old = kernels.entropy(mix, n, T)
        self.faces = _lagged_faces(prob, state, self.s_old)
        self.L_face = G.cell_to_face(g, mobility(prob.mobility, mix, (n, T)))
        self.K_face = G.cell_to_face(g, conductivity(prob.mobility, n))
        self.e_old = cell_total_energy(prob, n, T, state.u, self.rho_old)
        self.gh = prob.gh
        self.Gm = g.grad_matrix
        self.Dm = g.div_matrix
        self.Lap = (self.Dm @ self.Gm).tocsr()

    # -- residual pieces --------------------------------------------------

    def potentials(self, n, T):
        return chemical_potential_fields(self.prob, n, self.old.n, T)

    def fluxes(self, mu, T):
        g = self.g
        pot = mu if self.gh is None else mu + self.mix.Mw[:, None, None] * self.gh
        X = G.grad(g, pot / T)
        Jx = -np.einsum("ij...,j...->i...", self.L_face.xcomp, X.xcomp)
        Jy = -np.einsum("ij...,j...->i...", self.L_face.ycomp, X.ycomp)
        J = G.enforce_bc(g, G.FaceField(Jx, Jy))
        q = G.enforce_bc(g, -(self.K_face * G.grad(g, T)))
        return J, q

    def ustar(self, mu, T):
        return intermediate_velocity(self.prob, self.old, mu, T, faces=self.faces)

    def mass_residual(self, n, ustar, J):
        return n - solve_mass(self.prob, self.old.n, ustar, J)

    # -- Jacobians ----------------------------------------------------------

    def mass_jacobian(self, n, T, ustar):
        g, M, dt = self.g, self.M, self.dt
        mix = self.mix
        N = g.ncells
        H = kernels.hess_part(mix, n, T, self.prob.cfg.theta, "convex").reshape(M, M, N)
        blocks = [[sp.diags(H[i, j]) - mix.cij[i, j] * self.Lap for j in range(M)] for i in range(M)]
        Dmu = sp.bmat(blocks, format="csr")
        invT = sp.diags(1.0 / T.ravel())
        Lx = self.L_face.flat().reshape(M, M, -1)
        nf = self.faces["n"].flat().reshape(M, -1)
        inv_rho = self.faces["inv_rho"].flat()
        # gradient of each mu_j as a function of all densities
        GD = [self.Gm @ Dmu[j * N:(j + 1) * N, :] for j in range(M)]
        GDT = [self.Gm @ invT @ Dmu[j * N:(j + 1) * N, :] for j in range(M)]
        dU = sum(sp.diags(-dt * nf[i] * inv_rho) @ GD[i] for i in range(M))
        dU = _zero_rows(dU, _fixed_faces(g))
        rows = []
        for l in range(M):
            donor = _donor_values(g, ustar, self.old.n[l])
            dJ = sum(sp.diags(-Lx[l, j]) @ GDT[j] for j in range(M))
            dJ = _zero_rows(dJ, _fixed_faces(g))
            rows.append(self.Dm @ (sp.diags(donor) @ dU + dJ))
        Jac = sp.eye(M * N, format="csr") + dt * sp.vstack(rows, format="csr")
        return Jac.tocsc()

    def temperature_jacobian(self, n, T):
        g, dt = self.g, self.dt
        cv = -T * kernels.d2f_dT2(self.mix, n, T)
        A = sp.diags(cv.ravel()) - dt * (self.Dm @ sp.diags(self.K_face.flat()) @ self.Gm)
        return A.tocsc()

    # -- evaluation ------------------------------------------------------------

    def evaluate(self, n, T):
        mu = self.potentials(n, T)
        J, q = self.fluxes(mu, T)
        us = self.ustar(mu, T)
        return mu, J, q, us

    def energy_target(self, n, T, u_new, us, mu, q, J):
        return energy_update(self.prob, self.old, n, T, u_new, us, mu, q, J,
                             s_old=self.s_old, e_old=self.e_old)


def _fixed_faces(g):
    fixed, _ = _dirichlet_rows(g)
    return fixed if not g.periodic else np.array([], dtype=int)


def _zero_rows(A, rows):
    if len(rows) == 0:
        return A.tocsr()
    mask = np.ones(A.shape[0])
    mask[rows] = 0.0
    return (sp.diags(mask) @ A).tocsr()


def _donor_values(g, u: G.FaceField, phi):
    """Donor-cell value of ``phi`` on every face for velocity ``u`` (flattened)."""
    ones = G.FaceField(np.where(u.xcomp > 0, 1.0, np.where(u.xcomp < 0, -1.0, 0.0)),
                       np.where(u.ycomp > 0, 1.0, np.where(u.ycomp < 0, -1.0, 0.0)))
    # upwind_flux(sign(u), phi) = |.|*phi_donor with sign; recover phi_donor
    Fl = G.upwind_flux(g, ones, phi).flat()
    return Fl * ones.flat()


def _rel_change(new, old, scale):
    return float(np.max(np.abs(new - old)) / scale)


def step(prob: Problem, state: SimState) -> tuple[SimState, StepReport]:
    """Advance one time step.  Raises :class:`StepFailure` on non-convergence."""
    cfg = prob.cfg
    mix = prob.mix
    ws = _StepSolver(prob, state)
    n = state.n.copy()
    T = state.T.copy()
    u_new = state.u.copy()
    n_scale = float(np.max(np.abs(state.n)))
    T_scale = float(np.max(state.T))
    history = []
    converged = False
    lu_n = lu_T = None
    prev_change = np.inf
    it = 0
    try:
        for it in range(1, cfg.outer_max + 1):
            # densities
            n_next, lu_n = _newton_mass(ws, n, T, lu_n, cfg)
            # temperature
            mu, J, q, us = ws.evaluate(n_next, T)
            u_next = solve_momentum(prob, us, J, ws.rho_old)
            e_target = ws.energy_target(n_next, T, u_next, us, mu, q, J)
            Rt = cell_total_energy(prob, n_next, T, u_next) - e_target
            if lu_T is None:
                lu_T = spla.splu(ws.temperature_jacobian(n_next, T))
            dT = lu_T.solve(-Rt.ravel()).reshape(T.shape)
            T_next = T + dT
            if not np.all(T_next > 0):
                raise StepFailure("temperature update left the admissible range")
            u_scale = max(u_next.max_abs(), 1e-14)
            change = max(_rel_change(n_next, n, n_scale), _rel_change(T_next, T, T_scale),
                         (u_next - u_new).max_abs() / u_scale)
            history.append(change)
            log.debug("outer %d: change %.3e (n %.2e T %.2e u %.2e)", it, change,
                      _rel_change(n_next, n, n_scale), _rel_change(T_next, T, T_scale),
                      (u_next - u_new).max_abs() / u_scale)
            n, T, u_new = n_next, T_next, u_next
            if change < cfg.outer_tol:
                converged = True
                break
            if change > 0.5 * prev_change and it > 2:
                # slow contraction: refresh the linearisations
                lu_n = lu_T = None
            prev_change = change
    except th.ThermoDomainError as exc:
        raise StepFailure(f"thermodynamic domain error in outer iteration {it}: {exc}") from exc
    if not converged:
        raise StepFailure(f"outer iteration did not converge in {cfg.outer_max} sweeps "
                          f"(last change {history[-1]:.3e})",
                          StepReport(it, np.nan, np.nan, history[-1], False, history))

    # final conservative updates
    mu, J, q, us = ws.evaluate(n, T)
    n_new = solve_mass(prob, state.n, us, J)
    _check_admissible(mix, n_new)
    res_mass = float(np.max(np.abs(n_new - n)) / n_scale)
    u_new = solve_momentum(prob, us, J, ws.rho_old)
    e_new = ws.energy_target(n_new, T, u_new, us, mu, q, J)
    T_new = recover_temperature(prob, e_new, n_new, u_new, T_guess=T)
    res_T = float(np.max(np.abs(T_new - T)) / T_scale)
    e_check = cell_total_energy(prob, n_new, T_new, u_new)
    res_energy = float(np.max(np.abs(e_check - e_new)) / np.max(np.abs(e_new)))
    new_state = SimState(n_new, T_new, u_new, state.t + cfg.dt)
    report = StepReport(it, res_mass, res_energy, res_T, True, history)
    if max(res_mass, res_energy, res_T) > cfg.outer_tol:
        report.converged = False
        raise StepFailure(f"final residuals exceed tolerance (mass {res_mass:.2e}, "
                          f"energy {res_energy:.2e}, T {res_T:.2e})", report)
    g = prob.grid
    report.diagnostics = {
        "entropy": float(G.integrate(g, kernels.entropy(mix, n_new, T_new))),
        "energy": float(G.integrate(g, e_check)),
        "moles": G.integrate(g, n_new),
    }
    return new_state, report


def _admissible(mix, n):
    if not np.all(np.isfinite(n)) or not np.all(n > 0):
        return False
    return bool(np.all(np.tensordot(mix.b, n, axes=1) < th.BN_MAX))


def _newton_mass(ws: _StepSolver, n, T, lu, cfg: SchemeConfig):
    """Solve the density block at fixed ``T`` by damped Newton.

    ``lu`` is a factorised Jacobian from an earlier sweep or ``None``; a
    fresh factorisation is made whenever the reused one stalls.
    """
    scale = float(np.max(np.abs(n)))
    mu, J, _, us = ws.evaluate(n, T)
    R = ws.mass_residual(n, us, J)
    rnorm = float(np.max(np.abs(R)))
    fresh = lu is None
    for _ in range(cfg.inner_newton_max):
        if rnorm <= cfg.inner_newton_tol * scale:
            break
        if lu is None:
            lu = spla.splu(ws.mass_jacobian(n, T, us))
            fresh = True
        dn = lu.solve(-R.ravel()).reshape(n.shape)
        accepted = None
        lam = 1.0
        while lam >= 1e-3:
            trial = n + lam * dn
            if _admissible(ws.mix, trial):
                mu, J, _, us = ws.evaluate(trial, T)
                Rt = ws.mass_residual(trial, us, J)
                rt = float(np.max(np.abs(Rt)))
                if rt < rnorm:
                    accepted = (trial, Rt, rt)
                    break
            lam *= 0.5
        if accepted is None:
            if fresh:
                raise StepFailure("density Newton iteration could not reduce the residual; reduce dt")
            lu = None
            continue
        slow = accepted[2] > 0.25 * rnorm
        n, R, rnorm = accepted
        if slow and not fresh:
            lu = None
        fresh = False
    return n, lu


def _check_admissible(mix, n):
    if not np.all(np.isfinite(n)):
        raise StepFailure("non-finite molar densities; reduce dt")
    if not np.all(n > 0):
        raise StepFailure("non-positive molar density produced; reduce dt")
    B = np.tensordot(mix.b, n, axes=1)
    if not np.all(B < th.BN_MAX):
        raise StepFailure("b*n >= 1 produced; reduce dt")
