"""Peng-Robinson bulk thermodynamics of a multi-component mixture.

Everything here is a pure function of a molar-density vector ``n`` and a
temperature ``T``.  Densities are laid out component-first, so ``n`` has
shape ``(M,)`` for a single state or ``(M, ...)`` for a field of states, and
``T`` broadcasts against ``n.shape[1:]``.  All quantities are SI:
mol/m^3, K, Pa, J.

The bulk Helmholtz free energy density is split as::

    f_b = ideal + repulsion + attraction
        = (ideal + repulsion + theta*stab) + (attraction - theta*stab)
        =            convex               +          concave

The convex part is treated implicitly in time and the concave part
explicitly by the time stepper.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

R_GAS = 8.3144621
SQRT2 = np.sqrt(2.0)

PARTS = ("ideal", "repulsion", "attraction", "stab", "total")
SPLIT_PARTS = ("convex", "concave", "total")

# logarithm-domain guard
BN_MAX = 1.0 - 1e-12


class ThermoDomainError(ValueError):
    """A state lies outside the domain of the free-energy logarithms."""


@dataclass(frozen=True)
class Component:
    """Physical constants of one chemical species.

    Parameters
    ----------
    name : str
    Tc : float
        Critical temperature [K].
    Pc : float
        Critical pressure [Pa].
    omega : float
        Acentric factor [-].
    Mw : float
        Molar weight [kg/mol].
    alpha : tuple of 4 floats
        Ideal-gas heat capacity coefficients, ``cp(T) = sum_k alpha[k] T**k``
        in J/(mol K).
    """

    name: str
    Tc: float
    Pc: float
    omega: float
    Mw: float
    alpha: tuple[float, float, float, float]

    def __post_init__(self):
        if not self.Tc > 0:
            raise ValueError(f"component {self.name!r}: Tc must be positive")
        if not self.Pc > 0:
            raise ValueError(f"component {self.name!r}: Pc must be positive")
        if not self.Mw > 0:
            raise ValueError(f"component {self.name!r}: Mw must be positive")
        if len(self.alpha) != 4:
            raise ValueError(f"component {self.name!r}: need 4 heat-capacity coefficients")
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))

    def cp(self, T):
        """Ideal-gas molar heat capacity at constant pressure."""
        a0, a1, a2, a3 = self.alpha
        return a0 + T * (a1 + T * (a2 + T * a3))

    def cv(self, T, R=R_GAS):
        return self.cp(T) - R


@dataclass(frozen=True, eq=False)
class Mixture:
    """An M-component Peng-Robinson mixture with gradient-energy coefficients.

    ``a_scale`` multiplies the attraction parameter ``a(T)``; it exists so the
    ideal-gas and pure-repulsion limits can be exercised in tests and
    is 1 for every physical use.
    """

    components: tuple[Component, ...]
    kij: np.ndarray
    cij: np.ndarray
    T0: float = 298.15
    P0: float = 1.0e5
    theta0: float = -2478.95687512
    s0: float = 59.5827
    R: float = R_GAS
    a_scale: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        comps = tuple(self.components)
        M = len(comps)
        if M < 1:
            raise ValueError("a mixture needs at least one component")
        kij = np.array(self.kij, dtype=float).reshape(M, M)
        cij = np.array(self.cij, dtype=float).reshape(M, M)
        if not np.allclose(kij, kij.T, rtol=0, atol=1e-14):
            raise ValueError("kij must be symmetric")
        if np.any(np.diag(kij) != 0.0):
            raise ValueError("kij diagonal must be zero")
        if np.any(kij >= 1.0):
            raise ValueError("kij entries must be < 1")
        if not np.allclose(cij, cij.T, rtol=1e-12, atol=0):
            raise ValueError("cij must be symmetric")
        scale = max(np.abs(cij).max(), 1e-300)
        if np.linalg.eigvalsh(cij / scale).min() < -1e-12:
            raise ValueError("cij must be positive semi-definite")
        kij.setflags(write=False)
        cij.setflags(write=False)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "kij", kij)
        object.__setattr__(self, "cij", cij)

    @property
    def M(self) -> int:
        return len(self.components)

    def _vec(self, name):
        key = ("vec", name)
        if key not in self._cache:
            v = np.array([getattr(c, name) for c in self.components], dtype=float)
            v.setflags(write=False)
            self._cache[key] = v
        return self._cache[key]

    @property
    def Tc(self):
        return self._vec("Tc")

    @property
    def Pc(self):
        return self._vec("Pc")

    @property
    def omega(self):
        return self._vec("omega")

    @property
    def Mw(self):
        return self._vec("Mw")

    @property
    def alpha(self):
        """(M, 4) heat-capacity coefficient matrix."""
        key = ("alpha",)
        if key not in self._cache:
            v = np.array([c.alpha for c in self.components], dtype=float)
            v.setflags(write=False)
            self._cache[key] = v
        return self._cache[key]

    @property
    def m(self):
        key = ("m",)
        if key not in self._cache:
            v = np.array([m_coeff(w) for w in self.omega])
            v.setflags(write=False)
            self._cache[key] = v
        return self._cache[key]

    @property
    def b(self):
        """Pure-component covolumes b_i [m^3/mol]."""
        return 0.07780 * self.R * self.Tc / self.Pc

    @property
    def ac(self):
        """Pure-component attraction at the critical point, a_i(Tc_i)."""
        return 0.45724 * self.R**2 * self.Tc**2 / self.Pc

    def permuted(self, order) -> "Mixture":
        order = list(order)
        return Mixture(
            components=tuple(self.components[i] for i in order),
            kij=self.kij[np.ix_(order, order)],
            cij=self.cij[np.ix_(order, order)],
            T0=self.T0, P0=self.P0, theta0=self.theta0, s0=self.s0,
            R=self.R, a_scale=self.a_scale,
        )

    def with_(self, **changes) -> "Mixture":
        kw = dict(components=self.components, kij=self.kij, cij=self.cij,
                  T0=self.T0, P0=self.P0, theta0=self.theta0, s0=self.s0,
                  R=self.R, a_scale=self.a_scale)
        kw.update(changes)
        return Mixture(**kw)


@dataclass(frozen=True)
class BulkState:
    """Molar densities ``n`` (component axis first) and temperature ``T``."""

    n: np.ndarray
    T: np.ndarray | float

    def __post_init__(self):
        object.__setattr__(self, "n", np.asarray(self.n, dtype=float))
        object.__setattr__(self, "T", np.asarray(self.T, dtype=float))


@dataclass(frozen=True)
class MixParams:
    a: np.ndarray
    da_dT: np.ndarray
    d2a_dT2: np.ndarray
    b: np.ndarray


# ---------------------------------------------------------------------------
# pure-component pieces


def m_coeff(omega):
    """Peng-Robinson alpha-function slope m(omega)."""
    omega = np.asarray(omega, dtype=float)
    low = 0.37464 + 1.54226 * omega - 0.26992 * omega**2
    high = 0.379642 + 1.485030 * omega - 0.164423 * omega**2 + 0.016666 * omega**3
    out = np.where(omega <= 0.49, low, high)
    return float(out) if out.ndim == 0 else out


def pure_params(comp: Component, T, R=R_GAS):
    """Return ``(a_i, b_i)`` of one component at temperature ``T``."""
    T = np.asarray(T, dtype=float)
    m = m_coeff(comp.omega)
    kappa = 1.0 + m * (1.0 - np.sqrt(T / comp.Tc))
    a = 0.45724 * R**2 * comp.Tc**2 / comp.Pc * kappa**2
    b = 0.07780 * R * comp.Tc / comp.Pc
    return a, b


def cp_integral(comp: Component, T, T0):
    """Integral of cp(xi)/xi from T0 to T."""
    a0, a1, a2, a3 = comp.alpha
    return (a0 * np.log(T / T0) + a1 * (T - T0) + a2 * (T**2 - T0**2) / 2.0
            + a3 * (T**3 - T0**3) / 3.0)


def cp_enthalpy(comp: Component, T, T0):
    """Integral of cp(xi) from T0 to T."""
    a0, a1, a2, a3 = comp.alpha
    return (a0 * (T - T0) + a1 * (T**2 - T0**2) / 2.0 + a2 * (T**3 - T0**3) / 3.0
            + a3 * (T**4 - T0**4) / 4.0)


# ---------------------------------------------------------------------------
# shared intermediates


def _expand(vec, ndim):
    return vec.reshape(vec.shape + (1,) * ndim)


def _alpha_sqrt(mix: Mixture, T):
    """sqrt(a_i(T)) and its first two temperature derivatives, shape (M, ...)."""
    nd = np.ndim(T)
    Tc = _expand(mix.Tc, nd)
    m = _expand(mix.m, nd)
    sac = _expand(np.sqrt(mix.ac * mix.a_scale), nd)
    sT = np.sqrt(T)
    sTc = np.sqrt(Tc)
    alpha = sac * (1.0 + m * (1.0 - sT / sTc))
    d1 = -sac * m / (2.0 * sT * sTc)
    d2 = sac * m / (4.0 * T * sT * sTc)
    return alpha, d1, d2


def _check(mix: Mixture, n, T, stab=False):
    if n.shape[0] != mix.M:
        raise ValueError(f"expected {mix.M} components, got array of shape {n.shape}")
    if not np.all(n > 0):
        raise ThermoDomainError("molar densities must be positive")
    if not np.all(T > 0):
        raise ThermoDomainError("temperature must be positive")
    B = np.tensordot(mix.b, n, axes=1)
    if not np.all(B < BN_MAX):
        raise ThermoDomainError("b*n >= 1: state outside the repulsion domain")
    if stab:
        bn = _expand(mix.b, n.ndim - 1) * n
        if not np.all(bn < BN_MAX):
            raise ThermoDomainError("b_i*n_i >= 1: state outside the stabilization domain")
    return B


class _Eval:
    """Intermediates shared by every bulk quantity at one (n, T)."""

    def __init__(self, mix: Mixture, n, T, stab=False):
        n = np.asarray(n, dtype=float)
        T = np.broadcast_to(np.asarray(T, dtype=float), n.shape[1:]).astype(float)
        self.mix = mix
        self.n = n
        self.T = T
        self.B = _check(mix, n, T, stab)
        self.ntot = n.sum(axis=0)
        nd = n.ndim - 1
        self.nd = nd
        R = mix.R
        al, d1, d2 = _alpha_sqrt(mix, T)
        one_k = 1.0 - mix.kij
        # (A n)_i with A_ij = (1-k_ij) sqrt(a_i a_j); Q = n^T A n = a n^2
        w = al * n
        self.An = al * np.tensordot(one_k, w, axes=1)
        self.Q = (w * np.tensordot(one_k, w, axes=1)).sum(axis=0)
        wd = d1 * n
        # Q' = sum (1-k)(al_i' al_j + al_i al_j') n_i n_j
        self.Qd = 2.0 * (wd * np.tensordot(one_k, w, axes=1)).sum(axis=0)
        wdd = d2 * n
        self.Qdd = (2.0 * (wdd * np.tensordot(one_k, w, axes=1)).sum(axis=0)
                    + 2.0 * (wd * np.tensordot(one_k, wd, axes=1)).sum(axis=0))
        self.alpha_sqrt = al
        B = self.B
        up = 1.0 + (1.0 - SQRT2) * B
        dn = 1.0 + (1.0 + SQRT2) * B
        self.Lam = np.log(up / dn)
        self.dLam = (1.0 - SQRT2) / up - (1.0 + SQRT2) / dn
        self.d2Lam = -((1.0 - SQRT2) / up) ** 2 + ((1.0 + SQRT2) / dn) ** 2
        # G(B) = Lam / (2 sqrt2 B) so that f_att = Q G
        c = 1.0 / (2.0 * SQRT2)
        self.G = c * self.Lam / B
        self.dG = c * (self.dLam / B - self.Lam / B**2)
        self.d2G = c * (self.d2Lam / B - 2.0 * self.dLam / B**2 + 2.0 * self.Lam / B**3)
        self.RT = R * T
        # per-component ideal-gas temperature integrals, shape (M, ...)
        self.H = np.stack([cp_enthalpy(c_, T, mix.T0) for c_ in mix.components])
        self.I = np.stack([cp_integral(c_, T, mix.T0) for c_ in mix.components])
        self.logP = np.log(mix.P0 / (n * R * T))

    # --- free energy parts -------------------------------------------------

    def f_ideal(self):
        mix, n, T, R = self.mix, self.n, self.T, self.mix.R
        return (self.ntot * mix.theta0 - self.ntot * mix.s0 * T
                + (n * self.H).sum(axis=0) - self.ntot * R * (T - mix.T0)
                - (n * self.RT * self.logP).sum(axis=0)
                - T * (n * self.I).sum(axis=0))

    def f_repulsion(self):
        return -self.ntot * self.RT * np.log1p(-self.B)

    def f_attraction(self):
        return self.Q * self.G

    def f_stab(self):
        b = _expand(self.mix.b, self.nd)
        n = self.n
        return self.RT * (n * (np.log(n) - 1.0)).sum(axis=0) - self.RT * (n * np.log1p(-b * n)).sum(axis=0)

    def f(self, part):
        return {
            "ideal": self.f_ideal,
            "repulsion": self.f_repulsion,
            "attraction": self.f_attraction,
            "stab": self.f_stab,
            "total": lambda: self.f_ideal() + self.f_repulsion() + self.f_attraction(),
        }[part]()

    # --- chemical potentials -------------------------------------------------

    def mu_ideal(self):
        mix, T, R = self.mix, self.T, self.mix.R
        return (mix.theta0 - mix.s0 * T + self.H - R * (T - mix.T0)
                - self.RT * self.logP + self.RT - T * self.I)

    def mu_repulsion(self):
        b = _expand(self.mix.b, self.nd)
        one_m = 1.0 - self.B
        return -self.RT * np.log1p(-self.B) + self.ntot * self.RT * b / one_m

    def mu_attraction(self):
        b = _expand(self.mix.b, self.nd)
        return 2.0 * self.An * self.G + self.Q * self.dG * b

    def mu_stab(self):
        b = _expand(self.mix.b, self.nd)
        bn = b * self.n
        return self.RT * (np.log(self.n) - np.log1p(-bn) + bn / (1.0 - bn))

    # --- Hessians in n, shape (M, M, ...) ------------------------------------

    def hess_ideal(self):
        M = self.mix.M
        out = np.zeros((M, M) + self.n.shape[1:])
        for i in range(M):
            out[i, i] = self.RT / self.n[i]
        return out

    def hess_repulsion(self):
        b = _expand(self.mix.b, self.nd)
        one_m = 1.0 - self.B
        bi = b[:, None]
        bj = b[None, :]
        return self.RT * ((bi + bj) / one_m + self.ntot * bi * bj / one_m**2)

    def hess_attraction(self):
        mix = self.mix
        b = _expand(mix.b, self.nd)
        one_k = _expand(1.0 - mix.kij, self.nd)
        al = self.alpha_sqrt
        Aij = one_k * al[:, None] * al[None, :]
        bi = b[:, None]
        bj = b[None, :]
        Ani = self.An[:, None]
        Anj = self.An[None, :]
        return (2.0 * Aij * self.G + 2.0 * self.dG * (Ani * bj + Anj * bi)
                + self.Q * self.d2G * bi * bj)

    def hess_stab(self):
        M = self.mix.M
        b = _expand(self.mix.b, self.nd)
        bn = b * self.n
        d = self.RT * (1.0 / self.n + b / (1.0 - bn) + b / (1.0 - bn) ** 2)
        out = np.zeros((M, M) + self.n.shape[1:])
        for i in range(M):
            out[i, i] = d[i]
        return out

    # --- temperature derivatives ---------------------------------------------

    def s(self):
        mix, n, R = self.mix, self.n, self.mix.R
        return (self.ntot * mix.s0 + self.ntot * R * np.log1p(-self.B)
                + (n * R * self.logP).sum(axis=0) + (n * self.I).sum(axis=0)
                - self.Qd * self.G)

    def u(self):
        mix, n, T, R = self.mix, self.n, self.T, self.mix.R
        return (self.ntot * mix.theta0 + (n * self.H).sum(axis=0)
                - self.ntot * R * (T - mix.T0) + (self.Q - T * self.Qd) * self.G)

    def d2f_dT2(self):
        mix, n, T = self.mix, self.n, self.T
        cv = np.stack([c_.cv(T, mix.R) for c_ in mix.components])
        return -(n * cv).sum(axis=0) / T + self.Qdd * self.G


def _split(ev: _Eval, theta, kind, fn_id, fn_rep, fn_att, fn_stab):
    if kind not in SPLIT_PARTS:
        raise ValueError(f"unknown split part {kind!r}")
    if theta < 0:
        raise ValueError("theta must be >= 0")
    if kind == "total":
        return fn_id() + fn_rep() + fn_att()
    if kind == "convex":
        out = fn_id() + fn_rep()
        return out + theta * fn_stab() if theta else out
    out = fn_att()
    return out - theta * fn_stab() if theta else out


def _unpack(state):
    if isinstance(state, BulkState):
        return state.n, state.T
    n, T = state
    return np.asarray(n, dtype=float), np.asarray(T, dtype=float)


# ---------------------------------------------------------------------------
# public API


def mix_params(mix: Mixture, n, T) -> MixParams:
    """Mixing-rule parameters a(T), a'(T), a''(T) and b at composition ``n``."""
    n = np.asarray(n, dtype=float)
    ntot = n.sum(axis=0)
    if not np.all(ntot > 0):
        raise ThermoDomainError("total molar density must be positive")
    T = np.broadcast_to(np.asarray(T, dtype=float), n.shape[1:])
    y = n / ntot
    al, d1, d2 = _alpha_sqrt(mix, T)
    one_k = 1.0 - mix.kij
    w, wd, wdd = al * y, d1 * y, d2 * y
    a = (w * np.tensordot(one_k, w, axes=1)).sum(axis=0)
    da = 2.0 * (wd * np.tensordot(one_k, w, axes=1)).sum(axis=0)
    d2a = (2.0 * (wdd * np.tensordot(one_k, w, axes=1)).sum(axis=0)
           + 2.0 * (wd * np.tensordot(one_k, wd, axes=1)).sum(axis=0))
    b = np.tensordot(mix.b, y, axes=1)
    return MixParams(a=a, da_dT=da, d2a_dT2=d2a, b=b)


def f_bulk(mix: Mixture, state, part="total"):
    """Bulk Helmholtz free energy density [J/m^3] or one of its parts.

    ``part`` is one of ``ideal``, ``repulsion``, ``attraction``, ``stab`` or
    ``total`` (ideal + repulsion + attraction).
    """
    if part not in PARTS:
        raise ValueError(f"unknown free-energy part {part!r}")
    n, T = _unpack(state)
    return _Eval(mix, n, T, stab=(part == "stab")).f(part)


def f_bulk_split(mix: Mixture, state, theta=0.0):
    """Return ``(convex, concave)`` parts of the bulk free energy density."""
    n, T = _unpack(state)
    ev = _Eval(mix, n, T, stab=theta > 0)
    args = (ev.f_ideal, ev.f_repulsion, ev.f_attraction, ev.f_stab)
    return _split(ev, theta, "convex", *args), _split(ev, theta, "concave", *args)


def mu_bulk(mix: Mixture, state, theta=0.0, part="total"):
    """Bulk chemical potentials, shape like ``n``.

    ``part`` selects the derivative of the convex part, the concave part or
    the total bulk free energy with respect to each molar density.
    """
    n, T = _unpack(state)
    ev = _Eval(mix, n, T, stab=(theta > 0 and part != "total"))
    return _split(ev, theta, part, ev.mu_ideal, ev.mu_repulsion, ev.mu_attraction, ev.mu_stab)


def hess_bulk(mix: Mixture, state, theta=0.0, part="total"):
    """Hessian of the bulk free energy in ``n``, shape ``(M, M, ...)``."""
    n, T = _unpack(state)
    ev = _Eval(mix, n, T, stab=(theta > 0 and part != "total"))
    return _split(ev, theta, part, ev.hess_ideal, ev.hess_repulsion, ev.hess_attraction, ev.hess_stab)


def p_bulk(mix: Mixture, state):
    """Bulk pressure ``sum_i n_i mu_i - f_b`` [Pa]."""
    n, T = _unpack(state)
    ev = _Eval(mix, n, T)
    mu = ev.mu_ideal() + ev.mu_repulsion() + ev.mu_attraction()
    return (n * mu).sum(axis=0) - ev.f("total")


def s_bulk(mix: Mixture, state):
    """Bulk entropy density [J/(m^3 K)]."""
    n, T = _unpack(state)
    return _Eval(mix, n, T).s()


def u_internal_bulk(mix: Mixture, state):
    """Bulk internal energy density [J/m^3]."""
    n, T = _unpack(state)
    return _Eval(mix, n, T).u()


def d2f_dT2(mix: Mixture, state):
    """Second temperature derivative of the bulk free energy at fixed ``n``."""
    n, T = _unpack(state)
    return _Eval(mix, n, T).d2f_dT2()


def pr_pressure(mix: Mixture, n, T):
    """Closed-form Peng-Robinson pressure, independent of the free-energy route."""
    n = np.asarray(n, dtype=float)
    mp = mix_params(mix, n, T)
    ntot = n.sum(axis=0)
    bn = mp.b * ntot
    return ntot * mix.R * T / (1.0 - bn) - ntot**2 * mp.a / (1.0 + 2.0 * bn - bn**2)
