"""Onsager mobilities and the discrete diffusion and heat fluxes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grid as G
from .thermo import BulkState, Mixture, ThermoDomainError

MODELS = ("J1", "J2")


@dataclass(frozen=True, eq=False)
class MobilitySpec:
    """Diffusion model and conductivity.

    ``model`` is ``J1`` (molar-average reference velocity, mole-based
    coefficients) or ``J2`` (mass-average velocity, mass-based
    coefficients).  ``D`` is the symmetric, zero-diagonal matrix of binary
    diffusion coefficients [m^2/s].  The thermal conductivity is
    ``kappa0 * sum_i n_i``.
    """

    model: str
    D: np.ndarray
    kappa0: float = 0.0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"flux model must be one of {MODELS}")
        D = np.array(self.D, dtype=float)
        if D.ndim != 2 or D.shape[0] != D.shape[1]:
            raise ValueError("D must be a square matrix")
        if not np.allclose(D, D.T, rtol=1e-12, atol=0):
            raise ValueError("D must be symmetric")
        if np.any(np.diag(D) != 0.0):
            raise ValueError("D must have a zero diagonal")
        off = D[~np.eye(D.shape[0], dtype=bool)]
        if np.any(off <= 0):
            raise ValueError("off-diagonal diffusion coefficients must be positive")
        if self.kappa0 < 0:
            raise ValueError("kappa0 must be non-negative")
        D.setflags(write=False)
        object.__setattr__(self, "D", D)


def mobility(spec: MobilitySpec, mix: Mixture, state):
    """Mobility matrix ``L`` of shape ``(M, M, ...)`` at ``state``.

    ``state`` is a :class:`~esdiffuse.thermo.BulkState` or an ``(n, T)``
    pair; ``L`` depends on the densities only.
    """
    n = np.asarray(state.n if isinstance(state, BulkState) else state[0], dtype=float)
    if n.shape[0] != mix.M or spec.D.shape[0] != mix.M:
        raise ValueError("component count mismatch between mobility, mixture and state")
    if not np.all(n > 0):
        raise ThermoDomainError("molar densities must be positive")
    nd = n.ndim - 1
    R = mix.R
    D = spec.D.reshape(spec.D.shape + (1,) * nd)
    ni = n[:, None]
    nj = n[None, :]
    if spec.model == "J1":
        ntot = n.sum(axis=0)
        off = -D * ni * nj / (ntot * R)
    else:
        Mw = mix.Mw.reshape((-1,) + (1,) * nd)
        rho = (Mw * n).sum(axis=0)
        off = -D * ni * nj / (rho * R)
        # diagonal: sum_j D_ij n_i rho_j / (Mw_i rho R)
        off_diag_weighted = D * ni * (Mw * n)[None, :] / (Mw[:, None] * rho * R)
    M = mix.M
    L = off.copy()
    for i in range(M):
        if spec.model == "J1":
            L[i, i] = -off[i].sum(axis=0)
        else:
            L[i, i] = off_diag_weighted[i].sum(axis=0)
    return L


def conductivity(spec: MobilitySpec, n):
    return spec.kappa0 * np.asarray(n).sum(axis=0)


def diffusion_fluxes(g: G.Grid2D, spec: MobilitySpec, mix: Mixture, n_old, T_old, mu_new, T_new,
                     gh=None, L_face=None) -> G.FaceField:
    """Face diffusion fluxes ``J_i = -sum_j L_ij grad((mu_j + Mw_j gh) / T)``.

    ``L`` is evaluated at the lagged densities and averaged onto faces; a
    precomputed face mobility may be passed as ``L_face``.
    """
    if L_face is None:
        L_face = G.cell_to_face(g, mobility(spec, mix, (n_old, T_old)))
    pot = np.asarray(mu_new, dtype=float)
    if gh is not None:
        pot = pot + mix.Mw[:, None, None] * gh
    X = G.grad(g, pot / T_new)
    Jx = -np.einsum("ij...,j...->i...", L_face.xcomp, X.xcomp)
    Jy = -np.einsum("ij...,j...->i...", L_face.ycomp, X.ycomp)
    return G.enforce_bc(g, G.FaceField(Jx, Jy))


def heat_flux(g: G.Grid2D, spec: MobilitySpec, n_old, T_new, K_face=None) -> G.FaceField:
    """Fourier heat flux ``q = -K grad T`` with ``K = kappa0 * n`` at lagged densities."""
    T_new = np.asarray(T_new, dtype=float)
    if not np.all(T_new > 0):
        raise ThermoDomainError("temperature must be positive")
    if K_face is None:
        K_face = G.cell_to_face(g, conductivity(spec, n_old))
    return G.enforce_bc(g, -(K_face * G.grad(g, T_new)))


def entropy_production(g: G.Grid2D, q: G.FaceField, J: G.FaceField, mu, T, gh=None, Mw=None):
    """Discrete production ``(q, grad 1/T) - sum_i (J_i, grad((mu_i + Mw_i gh)/T))``."""
    pot = np.asarray(mu, dtype=float)
    if gh is not None:
        pot = pot + np.asarray(Mw)[:, None, None] * gh
    prod = G.face_inner(g, q, G.grad(g, 1.0 / T))
    X = G.grad(g, pot / T)
    for i in range(pot.shape[0]):
        prod -= G.face_inner(g, J[i], X[i])
    return prod
