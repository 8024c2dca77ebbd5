"""Per-cell bulk thermodynamics used inside the time step.

Dispatches to the compiled extension when it is importable and falls back to
vectorised numpy otherwise.  Set ``ESDIFFUSE_PURE=1`` to force the fallback.
Every function also accepts ``backend="python"`` or ``backend="compiled"``
to pick an implementation explicitly.
"""

from __future__ import annotations

import os

import numpy as np

from . import thermo as th

_core = None
if os.environ.get("ESDIFFUSE_PURE", "").strip().lower() not in ("1", "true", "yes"):
    try:
        from . import _core  # type: ignore[attr-defined]

        _core.set_domain_error(th.ThermoDomainError)
    except ImportError:  # pragma: no cover - depends on the build
        _core = None

BACKEND = "compiled" if _core is not None else "python"

_KIND = {"convex": 0, "concave": 1, "total": 2}


def available_backends():
    return ("python", "compiled") if _core is not None else ("python",)


def _use_compiled(mix, backend):
    if backend is None:
        backend = BACKEND
    if backend == "python":
        return False
    if backend != "compiled":
        raise ValueError(f"unknown backend {backend!r}")
    if _core is None:
        raise RuntimeError("compiled kernels are not available in this build")
    return mix.M <= _core.MAX_COMPONENTS


def _params(mix):
    key = ("core_params",)
    if key not in mix._cache:
        mix._cache[key] = _core.CoreParams({
            "M": mix.M, "T0": float(mix.T0), "P0": float(mix.P0), "theta0": float(mix.theta0),
            "s0": float(mix.s0), "R": float(mix.R),
            "sac": np.sqrt(mix.ac * mix.a_scale), "m": np.asarray(mix.m, dtype=float),
            "Tc": np.asarray(mix.Tc, dtype=float), "b": np.asarray(mix.b, dtype=float),
            "alpha": np.asarray(mix.alpha, dtype=float), "one_k": 1.0 - mix.kij,
        })
    return mix._cache[key]


def _flat(mix, n, T):
    n = np.asarray(n, dtype=float)
    if n.shape[0] != mix.M:
        raise ValueError(f"expected {mix.M} components, got array of shape {n.shape}")
    shape = n.shape[1:]
    nf = np.ascontiguousarray(n.reshape(mix.M, -1))
    Tf = np.ascontiguousarray(np.broadcast_to(np.asarray(T, dtype=float), shape).ravel())
    return nf, Tf, shape


def _scalar(mix, n, T, row):
    nf, Tf, shape = _flat(mix, n, T)
    return _core.scalars(_params(mix), nf, Tf)[row].reshape(shape)


def free_energy(mix, n, T, backend=None):
    if _use_compiled(mix, backend):
        return _scalar(mix, n, T, 0)
    return th.f_bulk(mix, (n, T))


def entropy(mix, n, T, backend=None):
    if _use_compiled(mix, backend):
        return _scalar(mix, n, T, 1)
    return th.s_bulk(mix, (n, T))


def internal_energy(mix, n, T, backend=None):
    if _use_compiled(mix, backend):
        return _scalar(mix, n, T, 2)
    return th.u_internal_bulk(mix, (n, T))


def d2f_dT2(mix, n, T, backend=None):
    if _use_compiled(mix, backend):
        return _scalar(mix, n, T, 3)
    return th.d2f_dT2(mix, (n, T))


def mu_part(mix, n, T, theta, part, backend=None):
    if _use_compiled(mix, backend):
        if part not in _KIND:
            raise ValueError(f"unknown split part {part!r}")
        if theta < 0:
            raise ValueError("theta must be >= 0")
        nf, Tf, shape = _flat(mix, n, T)
        return _core.mu_split(_params(mix), nf, Tf, float(theta), _KIND[part]).reshape((mix.M,) + shape)
    return th.mu_bulk(mix, (n, T), theta, part)


def hess_part(mix, n, T, theta, part, backend=None):
    if _use_compiled(mix, backend):
        if part not in _KIND:
            raise ValueError(f"unknown split part {part!r}")
        if theta < 0:
            raise ValueError("theta must be >= 0")
        nf, Tf, shape = _flat(mix, n, T)
        out = _core.hess_split(_params(mix), nf, Tf, float(theta), _KIND[part])
        return out.reshape((mix.M, mix.M) + shape)
    return th.hess_bulk(mix, (n, T), theta, part)


def recover_temperature(mix, n, target, T_guess, T_lo, T_hi, tol, max_iter=100, backend=None):
    """Solve ``u_b(n, T) = target`` per cell by safeguarded Newton.

    Returns ``(T, ok)`` where ``ok`` flags cells that converged to a root
    inside ``[T_lo, T_hi]``.
    """
    if _use_compiled(mix, backend):
        nf, Tf, shape = _flat(mix, n, T_guess)
        tg = np.ascontiguousarray(np.broadcast_to(np.asarray(target, dtype=float), shape).ravel())
        T, ok = _core.recover_temperature(_params(mix), nf, tg, Tf, float(T_lo), float(T_hi),
                                          float(tol), int(max_iter))
        return T.reshape(shape), ok.reshape(shape)
    return _recover_temperature_py(mix, n, target, T_guess, T_lo, T_hi, tol, max_iter)


def _recover_temperature_py(mix, n, target, T_guess, T_lo, T_hi, tol, max_iter=100):
    n = np.asarray(n, dtype=float)
    target = np.asarray(target, dtype=float)
    shape = np.broadcast_shapes(target.shape, n.shape[1:])
    target = np.broadcast_to(target, shape)
    lo = np.full(shape, float(T_lo))
    hi = np.full(shape, float(T_hi))
    r_lo = th.u_internal_bulk(mix, (n, lo)) - target
    r_hi = th.u_internal_bulk(mix, (n, hi)) - target
    ok = (r_lo <= 0) & (r_hi >= 0)
    T = np.clip(np.broadcast_to(np.asarray(T_guess, dtype=float), shape), T_lo, T_hi)
    done = ~ok
    for _ in range(max_iter):
        ev = th._Eval(mix, n, T)
        r = ev.u() - target
        cv = -T * ev.d2f_dT2()
        # keep the bracket around the root (u_b increases with T)
        lo = np.where(r < 0, T, lo)
        hi = np.where(r > 0, T, hi)
        T_new = T - r / cv
        out = (T_new <= lo) | (T_new >= hi) | ~np.isfinite(T_new)
        T_new = np.where(out, 0.5 * (lo + hi), T_new)
        conv = np.abs(T_new - T) <= tol * T
        T = np.where(done, T, T_new)
        done = done | conv
        if np.all(done):
            break
    return T, ok & done
