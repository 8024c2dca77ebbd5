"""Built-in verification suite run by ``esdiffuse selfcheck``.

Each check compares an analytic quantity with an independent oracle (finite
differences, closed forms, discrete identities) and returns a
:class:`CheckResult`.  Thermodynamic functions are looked up on the
``thermo`` module at call time so that a patched implementation is seen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grid as G
from . import kernels
from . import thermo as th
from .transport import MobilitySpec, mobility


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name} {self.detail}"


def reference_mixture() -> th.Mixture:
    """Methane / n-pentane mixture used by the bundled example."""
    c1 = th.Component("methane", 190.56, 45.99e5, 0.011, 16.04e-3,
                      (19.25, 5.213e-2, 1.197e-5, -1.132e-8))
    c2 = th.Component("n-pentane", 469.7, 33.70e5, 0.251, 72.15e-3,
                      (-3.626, 4.873e-1, -2.580e-4, 5.305e-8))
    return th.Mixture((c1, c2), kij=np.array([[0.0, 0.041], [0.041, 0.0]]),
                      cij=np.array([[0.0282, 0.0462], [0.0462, 0.3019]]) * 1e-18)


def random_states(mix, count, seed=0, n_range=(10.0, 1.2e4), T_range=(250.0, 400.0), bn_max=0.95):
    """``count`` states with ``n_i`` uniform in ``n_range`` and ``b.n < bn_max``."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        n = rng.uniform(*n_range, size=mix.M)
        if float(mix.b @ n) < bn_max:
            out.append((n, float(rng.uniform(*T_range))))
    return out


def _rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def fd_mu(mix, n, T, rel_step=1e-6):
    """Central differences of ``f_b`` in each density."""
    out = np.zeros(mix.M)
    for i in range(mix.M):
        h = rel_step * n[i]
        e = np.zeros(mix.M)
        e[i] = h
        out[i] = (th.f_bulk(mix, (n + e, T)) - th.f_bulk(mix, (n - e, T))) / (2 * h)
    return out


def fd_s(mix, n, T, h=1e-3):
    return -(th.f_bulk(mix, (n, T + h)) - th.f_bulk(mix, (n, T - h))) / (2 * h)


def fd_d2f_dT2(mix, n, T, h=0.05):
    f = lambda t: th.f_bulk(mix, (n, t))  # noqa: E731
    return (f(T + h) - 2 * f(T) + f(T - h)) / h**2


def fd_hessian_convex(mix, n, T, theta=0.0, rel_step=1e-4):
    """Second differences of the convex part of ``f_b``."""
    M = mix.M
    f = lambda x: th.f_bulk_split(mix, (x, T), theta)[0]  # noqa: E731
    H = np.zeros((M, M))
    h = rel_step * n
    for i in range(M):
        for j in range(M):
            ei = np.zeros(M)
            ej = np.zeros(M)
            ei[i] = h[i]
            ej[j] = h[j]
            H[i, j] = (f(n + ei + ej) - f(n + ei - ej) - f(n - ei + ej) + f(n - ei - ej)) / (4 * h[i] * h[j])
    return H


# ---------------------------------------------------------------------------
# checks


def check_mu(mix, states):
    err = max(_rel(th.mu_bulk(mix, (n, T)), fd_mu(mix, n, T)) for n, T in states)
    return CheckResult("thermo.mu_fd", err < 1e-6, f"max_rel_err={err:.2e}")


def check_entropy(mix, states):
    err = max(_rel(th.s_bulk(mix, (n, T)), fd_s(mix, n, T)) for n, T in states)
    return CheckResult("thermo.entropy_fd", err < 1e-6, f"max_rel_err={err:.2e}")


def check_identities(mix, states):
    e1 = e2 = e3 = 0.0
    for n, T in states:
        f = th.f_bulk(mix, (n, T))
        s = th.s_bulk(mix, (n, T))
        u = th.u_internal_bulk(mix, (n, T))
        mu = th.mu_bulk(mix, (n, T))
        p = th.p_bulk(mix, (n, T))
        e1 = max(e1, _rel(u, f + T * s))
        e2 = max(e2, _rel(p, float(n @ mu) - f))
        e3 = max(e3, _rel(p, th.pr_pressure(mix, n, T)))
    ok = max(e1, e2, e3) < 1e-10
    return CheckResult("thermo.identities", ok,
                       f"energy={e1:.2e} pressure_gibbs={e2:.2e} pressure_closed_form={e3:.2e}")


def check_d2f(mix, states):
    err = max(_rel(th.d2f_dT2(mix, (n, T)), fd_d2f_dT2(mix, n, T)) for n, T in states)
    return CheckResult("thermo.d2f_dT2_fd", err < 1e-5, f"max_rel_err={err:.2e}")


def check_temperature_concavity(mix, states):
    vals = np.array([float(th.d2f_dT2(mix, (n, T))) for n, T in states])
    sample = ", ".join(f"{v:.4g}" for v in vals[:3])
    return CheckResult("thermo.temperature_concavity", bool(np.all(vals <= 0)),
                       f"max_d2f_dT2={vals.max():.4g} samples=[{sample}]")


def check_convex_hessian(mix, states):
    worst = np.inf
    for n, T in states:
        H = fd_hessian_convex(mix, n, T)
        scale = np.max(np.abs(H))
        worst = min(worst, float(np.linalg.eigvalsh(0.5 * (H + H.T)).min() / scale))
    return CheckResult("thermo.convex_hessian_psd", worst >= -1e-8, f"min_scaled_eig={worst:.2e}")


def check_mobility(mix, states):
    D = np.array([[0.0, 1e-8], [1e-8, 0.0]]) if mix.M == 2 else \
        1e-8 * (np.ones((mix.M, mix.M)) - np.eye(mix.M))
    worst_null = 0.0
    worst_eig = np.inf
    for model in ("J1", "J2"):
        spec = MobilitySpec(model, D)
        w = np.ones(mix.M) if model == "J1" else mix.Mw
        for n, T in states:
            L = mobility(spec, mix, (n, T))
            nrm = np.max(np.abs(L))
            worst_null = max(worst_null, float(np.max(np.abs(w @ L)) / (nrm * np.max(w))))
            worst_eig = min(worst_eig, float(np.linalg.eigvalsh(0.5 * (L + L.T)).min() / nrm))
    ok = worst_null < 1e-14 and worst_eig >= -1e-14
    return CheckResult("transport.mobility", ok, f"null_residual={worst_null:.2e} min_scaled_eig={worst_eig:.2e}")


def check_summation_by_parts(seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for bc in ("neumann", "periodic"):
        g = G.Grid2D(7, 5, 0.3, 0.7, bc)
        f = rng.normal(size=g.shape)
        F = G.enforce_bc(g, G.FaceField(rng.normal(size=(8, 5)), rng.normal(size=(7, 6))))
        lhs = G.face_inner(g, G.grad(g, f), F)
        rhs = -float(np.sum(f * G.div(g, F)) * g.cell_area)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-300))
        worst = max(worst, abs(float(G.integrate(g, G.div(g, F)))) / G.face_inner(g, F, F) ** 0.5)
    return CheckResult("grid.summation_by_parts", worst < 1e-12, f"max_rel_err={worst:.2e}")


def check_backends(mix, states):
    if "compiled" not in kernels.available_backends():
        return CheckResult("kernels.backends_agree", True, "compiled backend not built; skipped")
    n = np.stack([s[0] for s in states], axis=1)
    T = np.array([s[1] for s in states])
    worst = 0.0
    for fn in ("free_energy", "entropy", "internal_energy", "d2f_dT2"):
        a = getattr(kernels, fn)(mix, n, T, backend="python")
        b = getattr(kernels, fn)(mix, n, T, backend="compiled")
        worst = max(worst, _rel(b, a))
    for part in ("convex", "concave"):
        worst = max(worst, _rel(kernels.mu_part(mix, n, T, 0.0, part, backend="compiled"),
                                kernels.mu_part(mix, n, T, 0.0, part, backend="python")))
        worst = max(worst, _rel(kernels.hess_part(mix, n, T, 0.0, part, backend="compiled"),
                                kernels.hess_part(mix, n, T, 0.0, part, backend="python")))
    return CheckResult("kernels.backends_agree", worst < 1e-12, f"max_rel_diff={worst:.2e}")


def check_fixed_point(mix):
    from .stepper import Problem, SchemeConfig, SimState, step

    g = G.Grid2D(6, 6, 5e-10, 5e-10)
    prob = Problem(mix, g, MobilitySpec("J2", 1e-8 * (1 - np.eye(mix.M)), 1e-3), SchemeConfig(dt=1e-12))
    n0 = np.broadcast_to(np.array([7430.2, 673.6])[:mix.M, None, None], (mix.M,) + g.shape).copy()
    st = SimState(n0, np.full(g.shape, 310.0), G.FaceField.zeros(g))
    new, _ = step(prob, st)
    err = max(_rel(new.n, st.n), _rel(new.T, st.T), new.u.max_abs())
    return CheckResult("stepper.uniform_fixed_point", err <= 1e-12, f"max_change={err:.2e}")


def run_checks(name_filter=None, count=20, seed=0):
    """Run every check whose name contains ``name_filter``."""
    mix = reference_mixture()
    states = random_states(mix, count, seed)
    registry = [
        ("thermo.mu_fd", lambda: check_mu(mix, states)),
        ("thermo.entropy_fd", lambda: check_entropy(mix, states)),
        ("thermo.identities", lambda: check_identities(mix, states)),
        ("thermo.d2f_dT2_fd", lambda: check_d2f(mix, states)),
        ("thermo.temperature_concavity", lambda: check_temperature_concavity(mix, states)),
        ("thermo.convex_hessian_psd", lambda: check_convex_hessian(mix, states)),
        ("transport.mobility", lambda: check_mobility(mix, states)),
        ("grid.summation_by_parts", lambda: check_summation_by_parts(seed)),
        ("kernels.backends_agree", lambda: check_backends(mix, states)),
        ("stepper.uniform_fixed_point", lambda: check_fixed_point(mix)),
    ]
    results = []
    for name, fn in registry:
        if name_filter and name_filter not in name:
            continue
        try:
            results.append(fn())
        except Exception as exc:  # a crashing check is a failing check
            results.append(CheckResult(name, False, f"error: {type(exc).__name__}: {exc}"))
    return results
