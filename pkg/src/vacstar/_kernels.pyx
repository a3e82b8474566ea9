# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled force kernels; same contract as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cbrt, sqrt, pow, expm1, log1p

cnp.import_array()

cdef enum:
    NGL = 8
cdef double GL_X[NGL]
cdef double GL_W[NGL]

_x, _w = np.polynomial.legendre.leggauss(NGL)
for _k in range(NGL):
    GL_X[_k] = 0.5 * (_x[_k] + 1.0)
    GL_W[_k] = 0.5 * _w[_k]


cdef inline double dp(double s, int kind, double a, double b) noexcept nogil:
    cdef double x
    if kind == 0:
        return a * b * pow(s, b - 1.0)
    x = cbrt(s / b)
    return 8.0 * a / (3.0 * b) * x * x / sqrt(1.0 + x * x)


cdef inline double pressure_increment(double s, double delta, int kind,
                                      double a, double b) noexcept nogil:
    cdef double acc = 0.0
    cdef int k
    if kind == 0:
        return a * pow(s, b) * expm1(b * log1p(delta))
    for k in range(NGL):
        acc += GL_W[k] * dp(s * (1.0 + delta * GL_X[k]), kind, a, b)
    return s * delta * acc


def forces(double[::1] x, double[::1] d, double[::1] v, double[::1] dm,
           double[::1] rho_cell, double[::1] dpbar, double nu1, double nu2,
           int kind, double a, double b, double dt, bint want_jac):
    cdef Py_ssize_t n = x.shape[0] - 1
    cdef Py_ssize_t k, j
    cdef double xl, xr, dl, dr, rl, rr, h, q, qbar, dq, vol, dvol, delta, Pi
    cdef double vl, vr, w, c0, S, D, n1 = nu1 / 3.0, hmin = 1e300
    cdef double rho, c, r, g
    cdef double volz[4]
    cdef double wz[4]
    cdef double c0z[4]
    cdef double ndz[4]
    cdef double dFR[4]
    cdef double dFL[4]
    cdef double NSz, Sz, Dz, gR, gL, hR, hL
    cdef int z

    F_arr = np.zeros(n + 1)
    cdef double[::1] F = F_arr
    lo_arr = np.zeros(n + 1) if want_jac else None
    di_arr = np.zeros(n + 1) if want_jac else None
    up_arr = np.zeros(n + 1) if want_jac else None
    cdef double[::1] lo, di, up
    if want_jac:
        lo = lo_arr
        di = di_arr
        up = up_arr

    for k in range(n):
        h = (x[k + 1] - x[k]) + (d[k + 1] - d[k])
        if h < hmin:
            hmin = h
    if hmin <= 0.0:
        return None, None, None, None, hmin

    with nogil:
        for k in range(n):
            xl = x[k]
            xr = x[k + 1]
            dl = d[k]
            dr = d[k + 1]
            rl = xl + dl
            rr = xr + dr
            h = (xr - xl) + (dr - dl)
            q = (rr * rr + rr * rl + rl * rl) / 3.0
            qbar = (xr * xr + xr * xl + xl * xl) / 3.0
            dq = (dr * (2.0 * xr + dr) + xr * dl + dr * xl + dr * dl + dl * (2.0 * xl + dl)) / 3.0
            vol = q * h
            dvol = dq * h + qbar * (dr - dl)
            delta = -dvol / vol
            Pi = pressure_increment(rho_cell[k], delta, kind, a, b)

            vl = v[k]
            vr = v[k + 1]
            w = rl + rr
            c0 = rl * vr - rr * vl
            S = w * c0 / vol
            D = (rr * rr * vr - rl * rl * vl) / vol

            F[k] += -rl * rl * Pi + n1 * S * w * rr + nu2 * D * rl * rl
            F[k + 1] += rr * rr * Pi - (n1 * S * w * rl + nu2 * D * rr * rr)

            if not want_jac:
                continue

            rho = rho_cell[k] * (1.0 + delta)
            c = dp(rho, kind, a, b) * rho / vol

            volz[0] = -rl * rl; volz[1] = rr * rr; volz[2] = 0.0; volz[3] = 0.0
            wz[0] = 1.0; wz[1] = 1.0; wz[2] = 0.0; wz[3] = 0.0
            c0z[0] = vr; c0z[1] = -vl; c0z[2] = -rr; c0z[3] = rl
            ndz[0] = -2.0 * rl * vl; ndz[1] = 2.0 * rr * vr; ndz[2] = -rl * rl; ndz[3] = rr * rr
            for z in range(4):
                NSz = wz[z] * c0 + w * c0z[z]
                Sz = (NSz - S * volz[z]) / vol
                Dz = (ndz[z] - D * volz[z]) / vol
                gR = Sz * w * rl + S * wz[z] * rl
                gL = Sz * w * rr + S * wz[z] * rr
                hR = Dz * rr * rr
                hL = Dz * rl * rl
                if z == 0:
                    gR += S * w
                    hL += 2.0 * D * rl
                elif z == 1:
                    gL += S * w
                    hR += 2.0 * D * rr
                dFR[z] = -(n1 * gR + nu2 * hR)
                dFL[z] = n1 * gL + nu2 * hL

            di[k] += dt * (-2.0 * rl * Pi - c * rl * rl * rl * rl + dFL[0]) + dFL[2]
            up[k] += dt * (c * rl * rl * rr * rr + dFL[1]) + dFL[3]
            lo[k + 1] += dt * (c * rr * rr * rl * rl + dFR[0]) + dFR[2]
            di[k + 1] += dt * (2.0 * rr * Pi - c * rr * rr * rr * rr + dFR[1]) + dFR[3]

        for j in range(1, n + 1):
            r = x[j] + d[j]
            if r > 0.0:
                g = d[j] * (r + x[j]) * (r * r + x[j] * x[j]) / (r * r)
                F[j] -= g * dpbar[j]
                if want_jac:
                    di[j] -= dt * (2.0 * r + 2.0 * pow(x[j], 4) / (r * r * r)) * dpbar[j]

    F[0] = 0.0
    if not want_jac:
        return F_arr, None, None, None, hmin
    lo[0] = 0.0
    di[0] = 0.0
    up[0] = 0.0
    return F_arr, lo_arr, di_arr, up_arr, hmin


def solve_tridiagonal(double[::1] lower, double[::1] diag, double[::1] upper, double[::1] rhs):
    """Thomas algorithm without pivoting (the Newton matrix is diagonally dominant)."""
    cdef Py_ssize_t n = diag.shape[0], j
    cp_arr = np.empty(n)
    out_arr = np.empty(n)
    cdef double[::1] cp = cp_arr
    cdef double[::1] u = out_arr
    cdef double m
    with nogil:
        cp[0] = upper[0] / diag[0]
        u[0] = rhs[0] / diag[0]
        for j in range(1, n):
            m = diag[j] - lower[j] * cp[j - 1]
            cp[j] = upper[j] / m
            u[j] = (rhs[j] - lower[j] * u[j - 1]) / m
        for j in range(n - 2, -1, -1):
            u[j] -= cp[j] * u[j + 1]
    return out_arr
