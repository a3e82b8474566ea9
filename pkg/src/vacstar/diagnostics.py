"""Energy functionals, sup-norm panels and decay-rate fits.

All integrals run over the mass coordinate ``x`` on the simulation grid and
omit the factor ``4 pi``.  Differences such as ``r_x - 1`` and ``r/x - 1`` are
formed from the stored displacement, so the functionals stay accurate for
perturbations many orders of magnitude below unity.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .simulator import (
    SimState,
    StateInvalidError,
    nodal_derivative,
    peak_abs,
    ratio_over_x,
)

__all__ = [
    "DiagnosticsConfig",
    "EnergyReport",
    "TheoremRates",
    "DecayFit",
    "FitError",
    "ParameterError",
    "PANEL_COLUMNS",
    "SERIES_COLUMNS",
    "perturbation_fields",
    "frak_E",
    "lower_energies",
    "weighted_energies",
    "eta_functionals",
    "eta_pointwise",
    "eta0_pointwise",
    "sup_norm_panel",
    "theorem_rates",
    "theta_max",
    "fit_decay",
    "energy_report",
    "series_row",
    "trapezoid",
    "singular_weight_integral",
]


class ParameterError(ValueError):
    pass


class FitError(ValueError):
    pass


PANEL_COLUMNS = (
    "r_minus_x",
    "v",
    "x_half_v",
    "x_3half_vx",
    "vx",
    "v_over_x",
    "rx_minus_1",
    "r_over_x_minus_1",
    "rho_w_Q",
    "rho_Q",
    "vacuum_c",
)

SERIES_COLUMNS = (
    ("t", "frakE", "E0", "E1", "E2", "D0", "D1", "D2", "scrE0", "scrD0", "scrD1", "eta", "lyapunov")
    + PANEL_COLUMNS
    + ("eta0", "local_L2", "local_Linf")
)


def theta_max(gamma_bar):
    return 1.0 - 5.0 / (4.0 * gamma_bar)


def _check_theta(gamma_bar, theta):
    hi = theta_max(gamma_bar)
    if not (0.0 < theta <= hi + 1e-15):
        raise ParameterError(f"theta={theta} outside (0, {hi:.6g}] for gamma_bar={gamma_bar}")


@dataclass(frozen=True)
class DiagnosticsConfig:
    """``l_frac`` sets the interior cutoff ``l = l_frac * R_bar``."""

    theta: float = 0.1
    l_frac: float = 0.25
    slack: float = 0.15
    fit_window: tuple = (10.0, 100.0)
    fits: tuple = (("D1", "2zeta"), ("v_sq", "2zeta-1/2"))

    def __post_init__(self):
        if not 0.0 < self.l_frac < 1.0:
            raise ParameterError("l_frac must lie in (0, 1)")
        if self.slack < 0:
            raise ParameterError("slack must be nonnegative")


# ---------------------------------------------------------------------------
# quadrature


def trapezoid(f, x):
    return float(np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(x)))


def singular_weight_integral(f, profile, alpha):
    """``int i(rho_bar)^{-alpha} f dx`` by product integration.

    With ``u = R_bar - x`` the weight is ``psi(u) u^{-alpha}`` where
    ``psi = (u / i)^alpha`` is smooth and positive.  ``psi f`` is taken
    piecewise linear in ``u`` and integrated exactly against ``u^{-alpha}``.
    """
    u = np.asarray(profile.depth, dtype=float)
    i_bar = np.asarray(profile.i_bar, dtype=float)
    psi = np.empty_like(u)
    psi[:-1] = (u[:-1] / i_bar[:-1]) ** alpha
    # i ~ (G M / R_bar^2) (R_bar - x) at the surface
    psi[-1] = (profile.G * profile.M / profile.R_bar**2) ** (-alpha)
    g = psi * f
    ua, ub = u[:-1], u[1:]  # ua > ub
    m0 = (ua ** (1 - alpha) - ub ** (1 - alpha)) / (1 - alpha)
    m1 = (ua ** (2 - alpha) - ub ** (2 - alpha)) / (2 - alpha)
    ga, gb = g[:-1], g[1:]
    slope_g = (ga - gb) / (ua - ub)
    return float(np.sum(gb * m0 + slope_g * (m1 - ub * m0)))


# ---------------------------------------------------------------------------
# pointwise fields


@dataclass(frozen=True)
class PerturbationFields:
    x: np.ndarray
    d: np.ndarray
    v: np.ndarray
    vt: np.ndarray
    a: np.ndarray  # r/x - 1
    b: np.ndarray  # r_x - 1
    vx: np.ndarray
    v_over_x: np.ndarray
    d_over_x_x: np.ndarray  # (r/x)_x
    dxx: np.ndarray  # r_xx
    vtx: np.ndarray


def perturbation_fields(state, vt=None):
    x = state.xs
    d, v = state.d, state.v
    if d[0] != 0.0:
        raise StateInvalidError("r(0) must vanish")
    if vt is None:
        vt = state.acceleration
    b = nodal_derivative(d, x)
    a = ratio_over_x(d, x, b[0])
    if np.any(1 + a <= 0) or np.any(1 + b <= 0):
        raise StateInvalidError("nonpositive r_x or r/x")
    vx = nodal_derivative(v, x)
    vox = ratio_over_x(v, x, vx[0])
    dox_x = nodal_derivative(a, x)
    dxx = nodal_derivative(d, x, order=2)
    vtx = nodal_derivative(vt, x)
    return PerturbationFields(x, d, v, vt, a, b, vx, vox, dox_x, dxx, vtx)


def density_defect(a, b):
    """``Q = x^2 / (r^2 r_x) - 1`` from ``a = r/x - 1`` and ``b = r_x - 1``."""
    lam2 = (1.0 + a) ** 2
    return -(2 * a + a * a + b * lam2) / (lam2 * (1.0 + b))


def _bregman_log(w):
    """``w - log1p(w)`` accurate for small ``w``."""
    w = np.asarray(w, dtype=float)
    out = w - np.log1p(w)
    small = np.abs(w) < 1e-2
    if np.any(small):
        ws = w[small]
        acc = np.zeros_like(ws)
        for k in range(12, 1, -1):
            acc = acc * ws + (-1) ** k / k
        out[small] = acc * ws * ws
    return out


def eta_pointwise(state, fields=None):
    f = fields or perturbation_fields(state)
    prof = state.profile
    a, b = f.a, f.b
    Q = density_defect(a, b)
    rho_bar = prof.rho_bar
    p_bar = prof.pressure
    bregman = prof.eos.potential_bregman(rho_bar, Q)
    lam2 = (1.0 + a) ** 2
    geo = a / lam2 * (-2 * a - 4 * a * a - a**3 - b * (4 + 6 * a + 4 * a * a + a**3))
    return rho_bar * bregman + p_bar * geo


def eta0_pointwise(state, fields=None):
    f = fields or perturbation_fields(state)
    a, b = f.a, f.b
    w1 = (b - a) / (1.0 + a)  # x r_x / r - 1
    w2 = 2 * a + a * a + b * (1 + a) ** 2  # r^2 r_x / x^2 - 1
    return 4 * state.nu1 * _bregman_log(w1) + 3 * state.nu2 * _bregman_log(w2)


# ---------------------------------------------------------------------------
# functionals


def frak_E(state, v_t_field=None, fields=None):
    """Sup norms of ``(r_x - 1, v_x)`` plus the two weighted L2 groups."""
    f = fields or perturbation_fields(state, v_t_field)
    prof = state.profile
    sup = peak_abs(f.b, f.x) ** 2 + peak_abs(f.vx, f.x) ** 2
    kinetic = trapezoid(prof.rho_bar * f.vt**2, f.x)
    w = np.zeros_like(f.x)
    inner = prof.rho_bar > 0
    w[inner] = prof.pressure[inner] ** 2 / prof.rho_bar[inner]
    curv = trapezoid(w * (f.d_over_x_x**2 + f.dxx**2), f.x)
    return sup + kinetic + curv


def lower_energies(state, v_t_field=None, fields=None):
    """``(E0, E1, E2, D0, D1, D2)`` by the trapezoid rule."""
    f = fields or perturbation_fields(state, v_t_field)
    prof = state.profile
    x = f.x
    base = f.d**2 + (x * f.b) ** 2
    E0 = trapezoid(base, x)
    D0 = trapezoid(prof.pressure * base, x)
    E1 = trapezoid(x * x * prof.rho_bar * f.v**2, x)
    E2 = trapezoid(x * x * prof.rho_bar * f.vt**2, x)
    D1 = trapezoid(f.v**2 + (x * f.vx) ** 2, x)
    D2 = trapezoid(f.vt**2 + (x * f.vtx) ** 2, x)
    return E0, E1, E2, D0, D1, D2


def weighted_energies(state, theta, fields=None):
    """``(scrE0, scrD0, scrD1)`` with weight ``i(rho_bar)^{-(1 - theta)}``."""
    gb = state.profile.eos.gamma_bar
    _check_theta(gb, theta)
    f = fields or perturbation_fields(state)
    prof = state.profile
    alpha = 1.0 - theta
    base = f.d**2 + (f.x * f.b) ** 2
    scrE0 = singular_weight_integral(base, prof, alpha)
    scrD0 = singular_weight_integral(prof.pressure * base, prof, alpha)
    scrD1 = singular_weight_integral(f.v**2 + (f.x * f.vx) ** 2, prof, alpha)
    return scrE0, scrD0, scrD1


def discrete_lyapunov(state):
    """Kinetic plus potential energy above equilibrium of the discrete system."""
    disc = state.disc
    return disc.potential_energy(state.d) + 0.5 * float(np.dot(disc.node_mass, state.v**2))


def eta_functionals(state, eos=None, fields=None):
    """``(int x^2 eta, int x^2 eta0, lyapunov)``.

    ``lyapunov`` is the energy the time stepper dissipates exactly; it
    agrees with ``E1 / 2 + int x^2 eta`` up to quadrature error.
    """
    f = fields or perturbation_fields(state)
    x2 = f.x**2
    eta = trapezoid(x2 * eta_pointwise(state, f), f.x)
    eta0 = trapezoid(x2 * eta0_pointwise(state, f), f.x)
    return eta, eta0, discrete_lyapunov(state)


def sup_norm_panel(state, fields=None, l_frac=0.25):
    f = fields or perturbation_fields(state)
    prof = state.profile
    x = f.x
    Q = density_defect(f.a, f.b)
    gb = prof.eos.gamma_bar
    w = prof.rho_bar ** ((3 * gb - 2) / 4)

    # vacuum equivalence: i(rho) against R(t) - r, both vanishing at the surface
    rho = prof.rho_bar * (1.0 + Q)
    i_rho = np.asarray(prof.eos.enthalpy(np.maximum(rho, 0.0)), dtype=float)
    gap = prof.depth + (f.d[-1] - f.d)  # R(t) - r without cancellation
    inner = slice(0, -1)
    ratio = i_rho[inner] / gap[inner]
    c = float(np.max(np.maximum(ratio, 1.0 / ratio)))

    panel = {
        "r_minus_x": np.max(np.abs(f.d)),
        "v": np.max(np.abs(f.v)),
        "x_half_v": np.max(np.sqrt(x) * np.abs(f.v)),
        "x_3half_vx": np.max(x**1.5 * np.abs(f.vx)),
        "vx": np.max(np.abs(f.vx)),
        "v_over_x": np.max(np.abs(f.v_over_x)),
        "rx_minus_1": np.max(np.abs(f.b)),
        "r_over_x_minus_1": np.max(np.abs(f.a)),
        "rho_w_Q": np.max(w * np.abs(Q)),
        "rho_Q": np.max(prof.rho_bar * np.abs(Q)),
        "vacuum_c": c,
    }
    return {k: float(v) for k, v in panel.items()}


def _local_norms(state, f, l_frac):
    """Interior norms on ``[0, R_bar - l]``: squared L2 of the second-order
    quantities and squared sup of ``(r_x - 1, r/x)`` deviations."""
    x = f.x
    cut = x <= (1.0 - l_frac) * state.profile.R_bar
    xs = x[cut]
    vxx = nodal_derivative(f.v, x, order=2)
    vox_x = nodal_derivative(f.v_over_x, x)
    l2 = sum(trapezoid(g[cut] ** 2, xs) for g in (f.dxx, f.d_over_x_x, vxx, vox_x))
    linf = float(np.max(np.abs(f.b[cut]))) ** 2 + float(np.max(np.abs(f.a[cut]))) ** 2
    return l2, linf


# ---------------------------------------------------------------------------
# report


@dataclass
class EnergyReport:
    t: float
    frakE: float
    E0: float
    E1: float
    E2: float
    D0: float
    D1: float
    D2: float
    scrE0: float
    scrD0: float
    scrD1: float
    eta_total: float
    lyapunov: float
    sup_norms: dict
    eta0_total: float = 0.0
    local_L2: float = 0.0
    local_Linf: float = 0.0

    def as_dict(self):
        return asdict(self)


def energy_report(state, cfg=None):
    cfg = cfg or DiagnosticsConfig()
    f = perturbation_fields(state)
    E0, E1, E2, D0, D1, D2 = lower_energies(state, fields=f)
    scr = weighted_energies(state, cfg.theta, fields=f)
    eta, eta0, lyap = eta_functionals(state, fields=f)
    panel = sup_norm_panel(state, fields=f, l_frac=cfg.l_frac)
    l2, linf = _local_norms(state, f, cfg.l_frac)
    return EnergyReport(
        t=float(state.t),
        frakE=frak_E(state, fields=f),
        E0=E0, E1=E1, E2=E2, D0=D0, D1=D1, D2=D2,
        scrE0=scr[0], scrD0=scr[1], scrD1=scr[2],
        eta_total=eta,
        lyapunov=lyap,
        sup_norms=panel,
        eta0_total=eta0,
        local_L2=l2,
        local_Linf=linf,
    )


def series_row(rep):
    """Values in ``SERIES_COLUMNS`` order."""
    head = [rep.t, rep.frakE, rep.E0, rep.E1, rep.E2, rep.D0, rep.D1, rep.D2,
            rep.scrE0, rep.scrD0, rep.scrD1, rep.eta_total, rep.lyapunov]
    panel = [rep.sup_norms[k] for k in PANEL_COLUMNS]
    return head + panel + [rep.eta0_total, rep.local_L2, rep.local_Linf]


def series_quantity(reports, name):
    """Time series of a named quantity; ``v_sq`` is ``||v||_inf^2``."""
    if name == "v_sq":
        return np.array([r.sup_norms["v"] ** 2 for r in reports])
    if name in PANEL_COLUMNS:
        return np.array([r.sup_norms[name] for r in reports])
    if name == "eta":
        return np.array([r.eta_total for r in reports])
    return np.array([getattr(r, name) for r in reports])


# ---------------------------------------------------------------------------
# rates and fits


@dataclass(frozen=True)
class TheoremRates:
    gamma_bar: float
    theta: float
    zeta: float
    upsilon: int
    rates: dict = field(default_factory=dict)

    def get(self, name):
        val = self.rates.get(name)
        if val is None:
            raise KeyError(f"rate {name!r} is not defined for gamma_bar={self.gamma_bar}")
        return val


def theorem_rates(gamma_bar, theta):
    if not gamma_bar > 4.0 / 3.0:
        raise ParameterError("gamma_bar must exceed 4/3")
    _check_theta(gamma_bar, theta)
    g = gamma_bar
    zeta = 1.0 - 1.0 / (2 * g) - theta / 2
    upsilon = 1 if g <= 2 else 0
    rates = {
        "2zeta": 2 * zeta,
        "2zeta-1": 2 * zeta - 1,
        "2zeta-1/2": 2 * zeta - 0.5,
        "zeta": zeta,
        "2-2/gamma-3theta/2": 2 - 2 / g - 1.5 * theta,
        "3-3/gamma-2theta": 3 - 3 / g - 2 * theta,
        "density_min": None,
    }
    if 2 < g < 4 and theta < (4 - g) / (g - 1):
        first = (4 - g) / (2 * g) - theta * ((g - 1) / (2 * g) + (4 - g - theta * (g - 1)) / (4 * g - 2))
        rates["density_min"] = min(first, 2 * zeta - 1)
    return TheoremRates(g, theta, zeta, upsilon, rates)


@dataclass(frozen=True)
class DecayFit:
    quantity: str
    window: tuple
    fitted_exponent: float
    r_squared: float
    predicted_exponent: float
    verdict: bool
    prefactor: float = float("nan")
    n_samples: int = 0
    slack: float = 0.15

    def as_record(self):
        return {
            "quantity": self.quantity,
            "window": list(self.window),
            "fitted": self.fitted_exponent,
            "predicted": self.predicted_exponent,
            "r_squared": self.r_squared,
            "prefactor": self.prefactor,
            "n_samples": self.n_samples,
            "slack": self.slack,
            "verdict": "pass" if self.verdict else "fail",
        }


def fit_decay(t, values, window, predicted, quantity="value", slack=0.15, min_samples=10):
    """Least-squares slope of ``log(value)`` against ``log(1 + t)`` on ``window``."""
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    lo, hi = window
    if lo < 1:
        raise FitError("fit window must start at t >= 1")
    sel = (t >= lo) & (t <= hi)
    if sel.sum() < min_samples:
        raise FitError(f"window {window} holds {int(sel.sum())} samples, need {min_samples}")
    tv, vv = t[sel], values[sel]
    bad = np.flatnonzero(~(vv > 0))
    if bad.size:
        k = bad[0]
        raise FitError(f"nonpositive {quantity} = {vv[k]!r} at t = {tv[k]!r}")
    X = np.log1p(tv)
    Y = np.log(vv)
    slope, intercept = np.polyfit(X, Y, 1)
    resid = Y - (slope * X + intercept)
    ss_tot = float(np.sum((Y - Y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(
        quantity=quantity,
        window=(float(lo), float(hi)),
        fitted_exponent=float(slope),
        r_squared=r2,
        predicted_exponent=float(predicted),
        verdict=bool(slope <= -predicted + slack),
        prefactor=float(math.exp(intercept)),
        n_samples=int(sel.sum()),
        slack=slack,
    )
