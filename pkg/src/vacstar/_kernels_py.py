"""Reference (numpy) implementation of the Lagrangian force kernels.

Nodes ``0..N`` carry displacement ``d = r - x`` and velocity ``v``; cell ``k``
spans nodes ``k`` and ``k + 1`` and holds the fixed mass ``dm[k]`` (per unit
solid angle).  The force on node ``j`` is

    F_j = -r_j^2 (Pi_j - Pi_{j-1}) - (r_j^2 - x_j^4 / r_j^2) dPbar_j + V_j

where ``Pi_k = p(rho_k) - p(rho_bar_k)`` is the cell pressure perturbation,
``dPbar_j = Pbar_j - Pbar_{j-1}`` the equilibrium pressure jump (exterior
pressure zero) and ``V_j = -dR/dv_j`` the viscous force from the Rayleigh
function ``R = 1/2 sum_k vol_k [nu1/3 S_k^2 + nu2 D_k^2]``.

The compiled module ``_kernels`` must reproduce these functions exactly.
"""

import numpy as np
from scipy.linalg import solve_banded

EOS_POLYTROPE = 0
EOS_WHITE_DWARF = 1

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


def _dp(s, kind, a, b):
    if kind == EOS_POLYTROPE:
        return a * b * s ** (b - 1.0)
    x = np.cbrt(s / b)
    return 8.0 * a / (3.0 * b) * x * x / np.sqrt(1.0 + x * x)


def _pressure_increment(s, delta, kind, a, b):
    if kind == EOS_POLYTROPE:
        return a * s**b * np.expm1(b * np.log1p(delta))
    nodes = s[:, None] * (1.0 + delta[:, None] * _GL_X)
    return s * delta * (_dp(nodes, kind, a, b) @ _GL_W)


def cell_geometry(x, d):
    """Cell widths, volumes and relative volume change, all cancellation-free."""
    xl, xr = x[:-1], x[1:]
    dl, dr = d[:-1], d[1:]
    rl, rr = xl + dl, xr + dr
    h = (xr - xl) + (dr - dl)
    q = (rr * rr + rr * rl + rl * rl) / 3.0
    qbar = (xr * xr + xr * xl + xl * xl) / 3.0
    dq = (dr * (2.0 * xr + dr) + xr * dl + dr * xl + dr * dl + dl * (2.0 * xl + dl)) / 3.0
    vol = q * h
    dvol = dq * h + qbar * (dr - dl)
    return rl, rr, h, vol, dvol


def forces(x, d, v, dm, rho_cell, dpbar, nu1, nu2, kind, a, b, dt, want_jac):
    """Nodal forces and, optionally, the tridiagonal ``dt dF/dr + dF/dv``.

    Returns ``(F, lower, diag, upper, hmin)``; the Jacobian arrays are ``None``
    unless ``want_jac``.  ``hmin`` is the smallest cell width (nonpositive
    means the map folded).
    """
    n = len(x) - 1
    rl, rr, h, vol, dvol = cell_geometry(x, d)
    hmin = float(h.min())
    if hmin <= 0.0:
        return None, None, None, None, hmin
    delta = -dvol / vol
    Pi = _pressure_increment(rho_cell, delta, kind, a, b)

    vl, vr = v[:-1], v[1:]
    w = rl + rr
    c0 = rl * vr - rr * vl
    S = w * c0 / vol
    D = (rr * rr * vr - rl * rl * vl) / vol
    n1 = nu1 / 3.0

    F = np.zeros(n + 1)
    # pressure perturbation
    F[:-1] -= rl * rl * Pi
    F[1:] += rr * rr * Pi
    # viscous
    FR = -(n1 * S * w * rl + nu2 * D * rr * rr)
    FL = n1 * S * w * rr + nu2 * D * rl * rl
    F[1:] += FR
    F[:-1] += FL
    # equilibrium pressure jump against gravity (well balanced)
    r = x + d
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(r > 0, d * (r + x) * (r * r + x * x) / (r * r), 0.0)
    F -= g * dpbar
    F[0] = 0.0
    if not want_jac:
        return F, None, None, None, hmin

    lower = np.zeros(n + 1)
    diag = np.zeros(n + 1)
    upper = np.zeros(n + 1)

    # pressure: dPi/dr_R = -c r_R^2, dPi/dr_L = c r_L^2
    rho = rho_cell * (1.0 + delta)
    c = _dp(rho, kind, a, b) * rho / vol
    dFL_drL = -2.0 * rl * Pi - c * rl**4
    dFL_drR = c * rl * rl * rr * rr
    dFR_drR = 2.0 * rr * Pi - c * rr**4
    dFR_drL = c * rr * rr * rl * rl

    # viscous partials; variables ordered (rL, rR, vL, vR)
    zero = np.zeros_like(rl)
    one = np.ones_like(rl)
    vol_z = (-rl * rl, rr * rr, zero, zero)
    w_z = (one, one, zero, zero)
    c0_z = (vr, -vl, -rr, rl)
    ND_z = (-2.0 * rl * vl, 2.0 * rr * vr, -rl * rl, rr * rr)
    dFR = []
    dFL = []
    for z in range(4):
        NS_z = w_z[z] * c0 + w * c0_z[z]
        S_z = (NS_z - S * vol_z[z]) / vol
        D_z = (ND_z[z] - D * vol_z[z]) / vol
        gR = S_z * w * rl + S * w_z[z] * rl + (S * w if z == 0 else 0.0)
        gL = S_z * w * rr + S * w_z[z] * rr + (S * w if z == 1 else 0.0)
        hR = D_z * rr * rr + (2.0 * D * rr if z == 1 else 0.0)
        hL = D_z * rl * rl + (2.0 * D * rl if z == 0 else 0.0)
        dFR.append(-(n1 * gR + nu2 * hR))
        dFL.append(n1 * gL + nu2 * hL)

    K_LL = dt * (dFL_drL + dFL[0]) + dFL[2]
    K_LR = dt * (dFL_drR + dFL[1]) + dFL[3]
    K_RL = dt * (dFR_drL + dFR[0]) + dFR[2]
    K_RR = dt * (dFR_drR + dFR[1]) + dFR[3]
    diag[:-1] += K_LL
    upper[:-1] += K_LR
    lower[1:] += K_RL
    diag[1:] += K_RR

    with np.errstate(divide="ignore", invalid="ignore"):
        dg = np.where(r > 0, 2.0 * r + 2.0 * x**4 / r**3, 0.0)
    diag -= dt * dg * dpbar
    lower[0] = diag[0] = upper[0] = 0.0
    return F, lower, diag, upper, hmin


def solve_tridiagonal(lower, diag, upper, rhs):
    """Solve ``lower[j] u[j-1] + diag[j] u[j] + upper[j] u[j+1] = rhs[j]``."""
    n = len(diag)
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    return solve_banded((1, 1), ab, rhs, check_finite=False)
