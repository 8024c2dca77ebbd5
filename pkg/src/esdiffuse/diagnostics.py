"""Integral monitors and verification residuals."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from skimage.measure import find_contours

from . import grid as G
from . import kernels
from . import thermo as th


class EmptyLevelSet(ValueError):
    """The requested level set contains no cells."""


@dataclass
class DiagnosticsRecord:
    step: int
    t: float
    S_total: float
    E_total: float
    moles: tuple
    kinetic: float
    max_u: float
    shape: float

    def as_dict(self):
        return asdict(self)


def total_entropy(mix, g: G.Grid2D, n, T) -> float:
    """Domain integral of the bulk entropy density [J/K per unit depth]."""
    return float(G.integrate(g, kernels.entropy(mix, n, T)))


def total_energy(prob, state) -> float:
    """Domain integral of the total energy density [J per unit depth]."""
    from .stepper import cell_total_energy

    return float(G.integrate(prob.grid, cell_total_energy(prob, state.n, state.T, state.u)))


def kinetic_energy(mix, g: G.Grid2D, n, u: G.FaceField) -> float:
    from .stepper import density, kinetic_energy as ke

    return float(G.integrate(g, ke(g, density(mix, n), u)))


def species_totals(g: G.Grid2D, n) -> np.ndarray:
    """Moles of each component in the domain (per unit depth)."""
    return np.asarray(G.integrate(g, n), dtype=float)


def shape_metric(f, level, hx=1.0, hy=1.0) -> float:
    """Isoperimetric ratio ``4 pi A / P^2`` of the set ``{f >= level}``.

    The area counts cells; the perimeter is the length of the piecewise
    linear ``level`` contour of ``f`` (closed along the domain boundary).
    A disk gives values near 1, an axis-aligned square near ``pi / 4``.
    """
    f = np.asarray(f, dtype=float)
    inside = f >= level
    count = int(inside.sum())
    if count == 0:
        raise EmptyLevelSet(f"no cells with value >= {level}")
    span = float(f.max() - f.min())
    pad = np.pad(f, 1, constant_values=level - span - 1.0)
    # contour just below the level so cells equal to it count as inside
    lev = np.nextafter(level, -np.inf)
    perim = 0.0
    for c in find_contours(pad, lev):
        d = np.diff(c, axis=0)
        perim += float(np.hypot(d[:, 0] * hx, d[:, 1] * hy).sum())
    area = count * hx * hy
    return 4.0 * np.pi * area / perim**2


def pressure_relation_residual(mix, g: G.Grid2D, n, T) -> float:
    """Max over interior faces of ``|sum_i n_i grad mu_i - grad p + s grad T|``.

    Densities and entropy are averaged to faces; the residual vanishes in
    the continuum limit and is second order for smooth fields.
    """
    n = np.asarray(n, dtype=float)
    T = np.asarray(T, dtype=float)
    mu = th.mu_bulk(mix, (n, T))
    p = th.p_bulk(mix, (n, T))
    s = th.s_bulk(mix, (n, T))
    r = (G.cell_to_face(g, n) * G.grad(g, mu)).sum(axis=0) - G.grad(g, p) + G.cell_to_face(g, s) * G.grad(g, T)
    r = G.enforce_bc(g, r)
    return r.max_abs()


def record(prob, state, step_index: int, level=None, component=-1) -> DiagnosticsRecord:
    """Diagnostics row for ``state``.

    The shape metric uses component ``component`` at ``level`` (default:
    midpoint of its current range).
    """
    g, mix = prob.grid, prob.mix
    f = state.n[component]
    if level is None:
        level = 0.5 * (f.min() + f.max())
    try:
        shape = shape_metric(f, level, g.hx, g.hy)
    except EmptyLevelSet:
        shape = float("nan")
    return DiagnosticsRecord(
        step=step_index,
        t=state.t,
        S_total=total_entropy(mix, g, state.n, state.T),
        E_total=total_energy(prob, state),
        moles=tuple(float(v) for v in species_totals(g, state.n)),
        kinetic=kinetic_energy(mix, g, state.n, state.u),
        max_u=state.u.max_abs(),
        shape=shape,
    )
