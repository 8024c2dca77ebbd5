# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-cell bulk thermodynamics.

Mirrors the vectorised evaluator in ``thermo`` term by term; every routine
walks the cells once and keeps the per-cell intermediates in registers.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, log1p, fabs, isfinite

cnp.import_array()

cdef enum:
    MAXM = 16

cdef double SQRT2 = sqrt(2.0)
cdef double BN_MAX = 1.0 - 1e-12

MAX_COMPONENTS = MAXM

cdef enum Status:
    OK = 0
    BAD_N = 1
    BAD_T = 2
    BAD_B = 3
    BAD_STAB = 4


cdef struct Params:
    int M
    double T0, P0, theta0, s0, R
    double sac[MAXM]
    double m[MAXM]
    double sTc[MAXM]
    double b[MAXM]
    double one_k[MAXM][MAXM]
    double alpha[MAXM][4]


cdef struct Cell:
    double ntot, B, RT, T
    double G, dG, d2G
    double Q, Qd, Qdd
    double al[MAXM]
    double An[MAXM]
    double H[MAXM]
    double Icp[MAXM]
    double logP[MAXM]


cdef class CoreParams:
    """Mixture constants unpacked once into a C struct."""

    cdef Params p

    def __init__(self, dict P):
        cdef int i, j, k
        cdef int M = P["M"]
        if M > MAXM:
            raise ValueError("too many components for the compiled kernels")
        self.p.M = M
        self.p.T0 = P["T0"]; self.p.P0 = P["P0"]; self.p.theta0 = P["theta0"]
        self.p.s0 = P["s0"]; self.p.R = P["R"]
        for i in range(M):
            self.p.sac[i] = P["sac"][i]
            self.p.m[i] = P["m"][i]
            self.p.sTc[i] = sqrt(P["Tc"][i])
            self.p.b[i] = P["b"][i]
            for k in range(4):
                self.p.alpha[i][k] = P["alpha"][i, k]
            for j in range(M):
                self.p.one_k[i][j] = P["one_k"][i, j]


cdef int _cell(Params* p, const double* n, Py_ssize_t stride, double T, bint stab, Cell* c) nogil:
    cdef int i, j, M = p.M
    cdef double ni, sT, kw, up, dn, Lam, dLam, d2Lam, cc, kwd
    cdef double T0 = p.T0
    if not (T > 0.0):
        return BAD_T
    c.T = T
    c.ntot = 0.0
    c.B = 0.0
    for i in range(M):
        ni = n[i * stride]
        if not (ni > 0.0):
            return BAD_N
        c.ntot += ni
        c.B += p.b[i] * ni
        if stab and not (p.b[i] * ni < BN_MAX):
            return BAD_STAB
    if not (c.B < BN_MAX):
        return BAD_B
    sT = sqrt(T)
    cdef double d1[MAXM]
    cdef double d2[MAXM]
    for i in range(M):
        c.al[i] = p.sac[i] * (1.0 + p.m[i] * (1.0 - sT / p.sTc[i]))
        d1[i] = -p.sac[i] * p.m[i] / (2.0 * sT * p.sTc[i])
        d2[i] = p.sac[i] * p.m[i] / (4.0 * T * sT * p.sTc[i])
    c.Q = 0.0; c.Qd = 0.0; c.Qdd = 0.0
    for i in range(M):
        kw = 0.0
        kwd = 0.0
        for j in range(M):
            kw += p.one_k[i][j] * c.al[j] * n[j * stride]
            kwd += p.one_k[i][j] * d1[j] * n[j * stride]
        ni = n[i * stride]
        c.An[i] = c.al[i] * kw
        c.Q += c.al[i] * ni * kw
        c.Qd += 2.0 * d1[i] * ni * kw
        c.Qdd += 2.0 * d2[i] * ni * kw + 2.0 * d1[i] * ni * kwd
    up = 1.0 + (1.0 - SQRT2) * c.B
    dn = 1.0 + (1.0 + SQRT2) * c.B
    Lam = log(up / dn)
    dLam = (1.0 - SQRT2) / up - (1.0 + SQRT2) / dn
    d2Lam = -((1.0 - SQRT2) / up) * ((1.0 - SQRT2) / up) + ((1.0 + SQRT2) / dn) * ((1.0 + SQRT2) / dn)
    cc = 1.0 / (2.0 * SQRT2)
    c.G = cc * Lam / c.B
    c.dG = cc * (dLam / c.B - Lam / (c.B * c.B))
    c.d2G = cc * (d2Lam / c.B - 2.0 * dLam / (c.B * c.B) + 2.0 * Lam / (c.B * c.B * c.B))
    c.RT = p.R * T
    cdef double a0, a1, a2, a3, lT
    cdef double T2 = T * T, T3 = T2 * T, T4 = T3 * T
    cdef double T02 = T0 * T0, T03 = T02 * T0, T04 = T03 * T0
    lT = log(T / T0)
    for i in range(M):
        a0 = p.alpha[i][0]; a1 = p.alpha[i][1]; a2 = p.alpha[i][2]; a3 = p.alpha[i][3]
        c.H[i] = a0 * (T - T0) + a1 * (T2 - T02) / 2.0 + a2 * (T3 - T03) / 3.0 + a3 * (T4 - T04) / 4.0
        c.Icp[i] = a0 * lT + a1 * (T - T0) + a2 * (T2 - T02) / 2.0 + a3 * (T3 - T03) / 3.0
        c.logP[i] = log(p.P0 / (n[i * stride] * p.R * T))
    return OK


cdef inline double _u(Params* p, const double* n, Py_ssize_t stride, Cell* c) nogil:
    cdef int i
    cdef double sn = 0.0
    for i in range(p.M):
        sn += n[i * stride] * c.H[i]
    return (c.ntot * p.theta0 + sn - c.ntot * p.R * (c.T - p.T0) + (c.Q - c.T * c.Qd) * c.G)


cdef inline double _d2f(Params* p, const double* n, Py_ssize_t stride, Cell* c) nogil:
    cdef int i
    cdef double T = c.T, cv, acc = 0.0
    for i in range(p.M):
        cv = p.alpha[i][0] + T * (p.alpha[i][1] + T * (p.alpha[i][2] + T * p.alpha[i][3])) - p.R
        acc += n[i * stride] * cv
    return -acc / T + c.Qdd * c.G


cdef void _raise(int code) except *:
    if code == BAD_N:
        raise _domain_error("molar densities must be positive")
    if code == BAD_T:
        raise _domain_error("temperature must be positive")
    if code == BAD_B:
        raise _domain_error("b*n >= 1: state outside the repulsion domain")
    if code == BAD_STAB:
        raise _domain_error("b_i*n_i >= 1: state outside the stabilization domain")


_domain_error = ValueError


def set_domain_error(cls):
    global _domain_error
    _domain_error = cls


def scalars(CoreParams P, const double[:, ::1] n, const double[::1] T):
    """Per-cell ``(f, s, u, d2f/dT2)``, returned as an array of shape (4, N)."""
    cdef Params p = P.p
    cdef Py_ssize_t N = n.shape[1], k
    cdef int i, code = OK
    cdef Cell c
    out = np.empty((4, N))
    cdef double[:, ::1] o = out
    cdef double fi, sn_logP, sn_I, sn_H
    with nogil:
        for k in range(N):
            code = _cell(&p, &n[0, k], N, T[k], False, &c)
            if code != OK:
                break
            sn_logP = 0.0; sn_I = 0.0; sn_H = 0.0
            for i in range(p.M):
                sn_logP += n[i, k] * c.logP[i]
                sn_I += n[i, k] * c.Icp[i]
                sn_H += n[i, k] * c.H[i]
            fi = (c.ntot * p.theta0 - c.ntot * p.s0 * c.T + sn_H - c.ntot * p.R * (c.T - p.T0)
                  - c.RT * sn_logP - c.T * sn_I)
            o[0, k] = fi - c.ntot * c.RT * log1p(-c.B) + c.Q * c.G
            o[1, k] = (c.ntot * p.s0 + c.ntot * p.R * log1p(-c.B) + p.R * sn_logP + sn_I - c.Qd * c.G)
            o[2, k] = _u(&p, &n[0, k], N, &c)
            o[3, k] = _d2f(&p, &n[0, k], N, &c)
    _raise(code)
    return out


def mu_split(CoreParams P, const double[:, ::1] n, const double[::1] T, double theta, int kind):
    """Chemical potentials of one split part: 0 convex, 1 concave, 2 total."""
    cdef Params p = P.p
    cdef Py_ssize_t N = n.shape[1], k
    cdef int i, code = OK
    cdef bint stab = theta > 0.0 and kind != 2
    cdef Cell c
    cdef double ideal, rep, att, st, bn, l1B
    out = np.empty((p.M, N))
    cdef double[:, ::1] o = out
    with nogil:
        for k in range(N):
            code = _cell(&p, &n[0, k], N, T[k], stab, &c)
            if code != OK:
                break
            l1B = log1p(-c.B)
            for i in range(p.M):
                if kind != 1:
                    ideal = (p.theta0 - p.s0 * c.T + c.H[i] - p.R * (c.T - p.T0)
                             - c.RT * c.logP[i] + c.RT - c.T * c.Icp[i])
                    rep = -c.RT * l1B + c.ntot * c.RT * p.b[i] / (1.0 - c.B)
                if kind != 0:
                    att = 2.0 * c.An[i] * c.G + c.Q * c.dG * p.b[i]
                st = 0.0
                if stab:
                    bn = p.b[i] * n[i, k]
                    st = theta * c.RT * (log(n[i, k]) - log1p(-bn) + bn / (1.0 - bn))
                if kind == 0:
                    o[i, k] = ideal + rep + st
                elif kind == 1:
                    o[i, k] = att - st
                else:
                    o[i, k] = ideal + rep + att
    _raise(code)
    return out


def hess_split(CoreParams P, const double[:, ::1] n, const double[::1] T, double theta, int kind):
    """Hessian in ``n`` of one split part, shape (M, M, N)."""
    cdef Params p = P.p
    cdef Py_ssize_t N = n.shape[1], k
    cdef int i, j, M = p.M, code = OK
    cdef bint stab = theta > 0.0 and kind != 2
    cdef Cell c
    cdef double rep, att, omB, v, bn
    out = np.zeros((M, M, N))
    cdef double[:, :, ::1] o = out
    with nogil:
        for k in range(N):
            code = _cell(&p, &n[0, k], N, T[k], stab, &c)
            if code != OK:
                break
            omB = 1.0 - c.B
            for i in range(M):
                for j in range(M):
                    v = 0.0
                    if kind != 1:
                        v += c.RT * ((p.b[i] + p.b[j]) / omB + c.ntot * p.b[i] * p.b[j] / (omB * omB))
                        if i == j:
                            v += c.RT / n[i, k]
                    if kind != 0:
                        v += (2.0 * p.one_k[i][j] * c.al[i] * c.al[j] * c.G
                              + 2.0 * c.dG * (c.An[i] * p.b[j] + c.An[j] * p.b[i])
                              + c.Q * c.d2G * p.b[i] * p.b[j])
                    if stab and i == j:
                        bn = p.b[i] * n[i, k]
                        att = theta * c.RT * (1.0 / n[i, k] + p.b[i] / (1.0 - bn)
                                              + p.b[i] / ((1.0 - bn) * (1.0 - bn)))
                        v += att if kind == 0 else -att
                    o[i, j, k] = v
    _raise(code)
    return out


def recover_temperature(CoreParams P, const double[:, ::1] n, const double[::1] target,
                        const double[::1] T_guess,
                        double T_lo, double T_hi, double tol, int max_iter):
    """Per-cell safeguarded Newton solve of ``u_b(n, T) = target``."""
    cdef Params p = P.p
    cdef Py_ssize_t N = n.shape[1], k
    cdef int it, code = OK
    cdef Cell c
    cdef double lo, hi, r, T, T_new, cv
    cdef bint done
    T_out = np.empty(N)
    ok_out = np.zeros(N, dtype=np.uint8)
    cdef double[::1] To = T_out
    cdef unsigned char[::1] okv = ok_out
    with nogil:
        for k in range(N):
            lo = T_lo
            hi = T_hi
            code = _cell(&p, &n[0, k], N, lo, False, &c)
            if code != OK:
                break
            r = _u(&p, &n[0, k], N, &c) - target[k]
            if r > 0.0:
                To[k] = min(max(T_guess[k], T_lo), T_hi)
                continue
            code = _cell(&p, &n[0, k], N, hi, False, &c)
            if code != OK:
                break
            r = _u(&p, &n[0, k], N, &c) - target[k]
            if r < 0.0:
                To[k] = min(max(T_guess[k], T_lo), T_hi)
                continue
            T = min(max(T_guess[k], T_lo), T_hi)
            done = False
            for it in range(max_iter):
                code = _cell(&p, &n[0, k], N, T, False, &c)
                if code != OK:
                    break
                r = _u(&p, &n[0, k], N, &c) - target[k]
                cv = -T * _d2f(&p, &n[0, k], N, &c)
                if r < 0.0:
                    lo = T
                if r > 0.0:
                    hi = T
                T_new = T - r / cv
                if T_new <= lo or T_new >= hi or not isfinite(T_new):
                    T_new = 0.5 * (lo + hi)
                if fabs(T_new - T) <= tol * T:
                    done = True
                T = T_new
                if done:
                    break
            if code != OK:
                break
            To[k] = T
            okv[k] = done
    _raise(code)
    return T_out, ok_out.astype(bool)
