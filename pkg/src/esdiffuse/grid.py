"""Uniform 2D MAC grid and its discrete calculus.

Scalars live at cell centres in arrays of shape ``(..., nx, ny)``; the last
two axes are x and y and any leading axes (e.g. components) are carried
along.  Velocities and fluxes live on faces: the x-component on vertical
faces, shape ``(..., nx+1, ny)``, the y-component on horizontal faces,
shape ``(..., nx, ny+1)``.

Two boundary modes are supported.  ``neumann`` closes the box: boundary
face gradients and boundary normal fluxes are zero.  ``periodic`` wraps
around, and the first and last face along a periodic axis are the same
physical face, so they always carry identical values.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

BC_MODES = ("neumann", "periodic")


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    hx: float
    hy: float
    bc: str = "neumann"

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid needs at least 2 cells in each direction")
        if not (self.hx > 0 and self.hy > 0):
            raise ValueError("cell sizes must be positive")
        if self.bc not in BC_MODES:
            raise ValueError(f"boundary mode must be one of {BC_MODES}")

    @classmethod
    def from_extent(cls, nx, ny, Lx, Ly, bc="neumann"):
        return cls(nx, ny, Lx / nx, Ly / ny, bc)

    @property
    def shape(self):
        return (self.nx, self.ny)

    @property
    def periodic(self) -> bool:
        return self.bc == "periodic"

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def ncells(self) -> int:
        return self.nx * self.ny

    @property
    def nxfaces(self) -> int:
        return (self.nx + 1) * self.ny

    @property
    def nyfaces(self) -> int:
        return self.nx * (self.ny + 1)

    def centers(self):
        """Cell-centre coordinates ``(X, Y)``, each of shape ``(nx, ny)``."""
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    # --- sparse operator matrices on flattened (C-order) arrays -----------

    @cached_property
    def grad_matrix(self) -> sp.csr_matrix:
        """Cells -> faces (x-faces first, then y-faces)."""
        return _grad_matrix(self)

    @cached_property
    def div_matrix(self) -> sp.csr_matrix:
        """Faces -> cells."""
        return _div_matrix(self)

    @cached_property
    def avg_matrix(self) -> sp.csr_matrix:
        """Cells -> faces arithmetic mean (boundary faces copy the inner cell)."""
        return _avg_matrix(self)


@dataclass
class FaceField:
    """Face-normal components of a vector field on the MAC grid."""

    xcomp: np.ndarray
    ycomp: np.ndarray

    @classmethod
    def zeros(cls, g: Grid2D, lead=()):
        lead = tuple(lead)
        return cls(np.zeros(lead + (g.nx + 1, g.ny)), np.zeros(lead + (g.nx, g.ny + 1)))

    @classmethod
    def from_flat(cls, g: Grid2D, v):
        v = np.asarray(v)
        lead = v.shape[:-1]
        nxf = g.nxfaces
        return cls(v[..., :nxf].reshape(lead + (g.nx + 1, g.ny)),
                   v[..., nxf:].reshape(lead + (g.nx, g.ny + 1)))

    def flat(self):
        lead = self.xcomp.shape[:-2]
        return np.concatenate([self.xcomp.reshape(lead + (-1,)), self.ycomp.reshape(lead + (-1,))], axis=-1)

    def copy(self):
        return FaceField(self.xcomp.copy(), self.ycomp.copy())

    def __getitem__(self, idx):
        return FaceField(self.xcomp[idx], self.ycomp[idx])

    def _binary(self, other, op):
        if isinstance(other, FaceField):
            return FaceField(op(self.xcomp, other.xcomp), op(self.ycomp, other.ycomp))
        return FaceField(op(self.xcomp, other), op(self.ycomp, other))

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return FaceField(-self.xcomp, -self.ycomp)

    def sum(self, axis=0):
        return FaceField(self.xcomp.sum(axis=axis), self.ycomp.sum(axis=axis))

    def max_abs(self) -> float:
        return float(max(np.abs(self.xcomp).max(initial=0.0), np.abs(self.ycomp).max(initial=0.0)))


# ---------------------------------------------------------------------------
# pointwise operators


def grad(g: Grid2D, f) -> FaceField:
    """Two-point face-normal gradient of a cell field."""
    f = np.asarray(f, dtype=float)
    lead = f.shape[:-2]
    gx = np.zeros(lead + (g.nx + 1, g.ny))
    gy = np.zeros(lead + (g.nx, g.ny + 1))
    gx[..., 1:-1, :] = (f[..., 1:, :] - f[..., :-1, :]) / g.hx
    gy[..., :, 1:-1] = (f[..., :, 1:] - f[..., :, :-1]) / g.hy
    if g.periodic:
        wx = (f[..., 0, :] - f[..., -1, :]) / g.hx
        gx[..., 0, :] = wx
        gx[..., -1, :] = wx
        wy = (f[..., :, 0] - f[..., :, -1]) / g.hy
        gy[..., :, 0] = wy
        gy[..., :, -1] = wy
    return FaceField(gx, gy)


def div(g: Grid2D, F: FaceField):
    """Conservative face-difference divergence."""
    return ((F.xcomp[..., 1:, :] - F.xcomp[..., :-1, :]) / g.hx
            + (F.ycomp[..., :, 1:] - F.ycomp[..., :, :-1]) / g.hy)


def cell_to_face(g: Grid2D, f) -> FaceField:
    """Arithmetic mean of the two cells adjacent to each face.

    On a closed boundary the single inner cell value is used.
    """
    f = np.asarray(f, dtype=float)
    lead = f.shape[:-2]
    fx = np.empty(lead + (g.nx + 1, g.ny))
    fy = np.empty(lead + (g.nx, g.ny + 1))
    fx[..., 1:-1, :] = 0.5 * (f[..., 1:, :] + f[..., :-1, :])
    fy[..., :, 1:-1] = 0.5 * (f[..., :, 1:] + f[..., :, :-1])
    if g.periodic:
        wx = 0.5 * (f[..., 0, :] + f[..., -1, :])
        fx[..., 0, :] = wx
        fx[..., -1, :] = wx
        wy = 0.5 * (f[..., :, 0] + f[..., :, -1])
        fy[..., :, 0] = wy
        fy[..., :, -1] = wy
    else:
        fx[..., 0, :] = f[..., 0, :]
        fx[..., -1, :] = f[..., -1, :]
        fy[..., :, 0] = f[..., :, 0]
        fy[..., :, -1] = f[..., :, -1]
    return FaceField(fx, fy)


def enforce_bc(g: Grid2D, F: FaceField) -> FaceField:
    """Zero boundary normal components (closed box) or sync periodic duplicates."""
    F = F.copy()
    if g.periodic:
        F.xcomp[..., -1, :] = F.xcomp[..., 0, :]
        F.ycomp[..., :, -1] = F.ycomp[..., :, 0]
    else:
        F.xcomp[..., 0, :] = 0.0
        F.xcomp[..., -1, :] = 0.0
        F.ycomp[..., :, 0] = 0.0
        F.ycomp[..., :, -1] = 0.0
    return F


def div_c_grad(g: Grid2D, c, n):
    """Component-coupled Laplacian: ``out_i = sum_j c_ij div(grad(n_j))``."""
    c = np.asarray(c, dtype=float)
    lap = div(g, grad(g, n))
    return np.tensordot(c, lap, axes=1)


def upwind_flux(g: Grid2D, u: FaceField, phi) -> FaceField:
    """Face flux ``u * phi_donor`` with the donor cell picked by the sign of ``u``."""
    phi = np.asarray(phi, dtype=float)
    lead = phi.shape[:-2]
    ux, uy = u.xcomp, u.ycomp
    fx = np.zeros(lead + ux.shape[-2:])
    fy = np.zeros(lead + uy.shape[-2:])
    left, right = phi[..., :-1, :], phi[..., 1:, :]
    vx = ux[..., 1:-1, :]
    fx[..., 1:-1, :] = np.where(vx > 0, vx * left, vx * right)
    low, high = phi[..., :, :-1], phi[..., :, 1:]
    vy = uy[..., :, 1:-1]
    fy[..., :, 1:-1] = np.where(vy > 0, vy * low, vy * high)
    if g.periodic:
        vx0 = ux[..., 0, :]
        wx = np.where(vx0 > 0, vx0 * phi[..., -1, :], vx0 * phi[..., 0, :])
        fx[..., 0, :] = wx
        fx[..., -1, :] = wx
        vy0 = uy[..., :, 0]
        wy = np.where(vy0 > 0, vy0 * phi[..., :, -1], vy0 * phi[..., :, 0])
        fy[..., :, 0] = wy
        fy[..., :, -1] = wy
    return FaceField(fx, fy)


def upwind_div(g: Grid2D, u: FaceField, phi):
    """Divergence of the donor-cell advective flux ``u phi``."""
    return div(g, upwind_flux(g, u, phi))


def integrate(g: Grid2D, f):
    """Domain integral of a cell field (sums over the last two axes)."""
    return np.asarray(f).sum(axis=(-2, -1)) * g.cell_area


def face_weights(g: Grid2D) -> FaceField:
    """Control-volume fractions of faces; half weight on boundary faces."""
    wx = np.ones((g.nx + 1, g.ny))
    wy = np.ones((g.nx, g.ny + 1))
    wx[0, :] = wx[-1, :] = 0.5
    wy[:, 0] = wy[:, -1] = 0.5
    return FaceField(wx, wy)


def face_inner(g: Grid2D, F: FaceField, H: FaceField):
    """Discrete L2 inner product of two face fields."""
    w = face_weights(g)
    return float(((F.xcomp * H.xcomp * w.xcomp).sum() + (F.ycomp * H.ycomp * w.ycomp).sum())
                 * g.cell_area)


def face_to_cell_sq(g: Grid2D, F: FaceField):
    """Cell value of |F|^2 from the mean of squared face values per direction.

    Summed over cells this equals the face-weighted sum of squares, so cell
    kinetic energies integrate to the staggered face kinetic energy.
    """
    fx2 = F.xcomp**2
    fy2 = F.ycomp**2
    return 0.5 * (fx2[..., 1:, :] + fx2[..., :-1, :]) + 0.5 * (fy2[..., :, 1:] + fy2[..., :, :-1])


def face_to_cell_dot(g: Grid2D, F: FaceField, H: FaceField):
    """Cell value of F.H built the same way as :func:`face_to_cell_sq`."""
    px = F.xcomp * H.xcomp
    py = F.ycomp * H.ycomp
    return 0.5 * (px[..., 1:, :] + px[..., :-1, :]) + 0.5 * (py[..., :, 1:] + py[..., :, :-1])


# ---------------------------------------------------------------------------
# sparse assembly


def _cell_index(g: Grid2D):
    return np.arange(g.ncells).reshape(g.nx, g.ny)


def _grad_matrix(g: Grid2D):
    c = _cell_index(g)
    rows, cols, vals = [], [], []
    xf = np.arange(g.nxfaces).reshape(g.nx + 1, g.ny)
    yf = g.nxfaces + np.arange(g.nyfaces).reshape(g.nx, g.ny + 1)

    def add(r, cp, cm, h):
        r = r.ravel(); cp = cp.ravel(); cm = cm.ravel()
        rows.extend([r, r]); cols.extend([cp, cm])
        vals.extend([np.full(r.size, 1.0 / h), np.full(r.size, -1.0 / h)])

    add(xf[1:-1, :], c[1:, :], c[:-1, :], g.hx)
    add(yf[:, 1:-1], c[:, 1:], c[:, :-1], g.hy)
    if g.periodic:
        for fi in (0, g.nx):
            add(xf[fi, :], c[0, :], c[-1, :], g.hx)
        for fj in (0, g.ny):
            add(yf[:, fj], c[:, 0], c[:, -1], g.hy)
    nf = g.nxfaces + g.nyfaces
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(nf, g.ncells))


def _div_matrix(g: Grid2D):
    c = _cell_index(g)
    xf = np.arange(g.nxfaces).reshape(g.nx + 1, g.ny)
    yf = g.nxfaces + np.arange(g.nyfaces).reshape(g.nx, g.ny + 1)
    r = np.concatenate([c.ravel()] * 4)
    cols = np.concatenate([xf[1:, :].ravel(), xf[:-1, :].ravel(), yf[:, 1:].ravel(), yf[:, :-1].ravel()])
    n = g.ncells
    vals = np.concatenate([np.full(n, 1.0 / g.hx), np.full(n, -1.0 / g.hx),
                           np.full(n, 1.0 / g.hy), np.full(n, -1.0 / g.hy)])
    return sp.csr_matrix((vals, (r, cols)), shape=(n, g.nxfaces + g.nyfaces))


def _avg_matrix(g: Grid2D):
    c = _cell_index(g)
    xf = np.arange(g.nxfaces).reshape(g.nx + 1, g.ny)
    yf = g.nxfaces + np.arange(g.nyfaces).reshape(g.nx, g.ny + 1)
    rows, cols, vals = [], [], []

    def pair(r, a, b):
        r = r.ravel()
        rows.extend([r, r]); cols.extend([a.ravel(), b.ravel()])
        vals.extend([np.full(r.size, 0.5)] * 2)

    def single(r, a):
        r = r.ravel()
        rows.append(r); cols.append(a.ravel()); vals.append(np.ones(r.size))

    pair(xf[1:-1, :], c[1:, :], c[:-1, :])
    pair(yf[:, 1:-1], c[:, 1:], c[:, :-1])
    if g.periodic:
        for fi in (0, g.nx):
            pair(xf[fi, :], c[0, :], c[-1, :])
        for fj in (0, g.ny):
            pair(yf[:, fj], c[:, 0], c[:, -1])
    else:
        single(xf[0, :], c[0, :]); single(xf[-1, :], c[-1, :])
        single(yf[:, 0], c[:, 0]); single(yf[:, -1], c[:, -1])
    nf = g.nxfaces + g.nyfaces
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(nf, g.ncells))
