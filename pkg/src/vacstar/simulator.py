"""Lagrangian time integration of a viscous self-gravitating gas ball.

The mass coordinate is the equilibrium radius ``x`` and the unknowns are the
flow map ``r(x, t)`` and velocity ``v(x, t)``.  Space is discretised with
cells of fixed mass between graded nodes.  The pressure force comes from the
internal energy of the cells, viscosity from a Rayleigh dissipation
function, and gravity from a potential tuned so that the discrete
equilibrium ``r = x, v = 0`` balances exactly.  Because every force derives
from a potential or a dissipation function, the stress-free surface
condition is the natural boundary condition of the scheme and the discrete
energy ``kinetic + potential`` can only decrease under backward Euler.

Internally the map is stored as the displacement ``d = r - x`` so that
tiny perturbations keep full relative precision.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import factorial

from . import kernels
from .eos import Polytrope, WhiteDwarf
from .equilibrium import FOUR_PI, EquilibriumProfile, integrate_profile

log = logging.getLogger(__name__)

__all__ = [
    "SimConfig",
    "SimState",
    "Perturbation",
    "Discretization",
    "Trajectory",
    "StateInvalidError",
    "StepRejected",
    "StepFailure",
    "AdmissibilityError",
    "initial_map",
    "momentum_rhs",
    "step",
    "run",
    "density_field",
    "boundary_stress",
    "make_compatible_perturbation",
    "nodal_derivative",
    "peak_abs",
    "eulerian_mass",
    "equilibrium_state",
    "initial_state",
    "ratio_over_x",
]

_GL16_X, _GL16_W = np.polynomial.legendre.leggauss(16)
_GL16_X = 0.5 * (_GL16_X + 1.0)
_GL16_W = 0.5 * _GL16_W
_SURFACE_POWER = 4  # substitution exponent on the cell touching vacuum


class StateInvalidError(ValueError):
    """The flow map folded (``r_x <= 0``) or left the admissible set."""


class StepRejected(ArithmeticError):
    """One implicit step failed; the caller may retry with a smaller step."""


class StepFailure(ArithmeticError):
    """Time stepping gave up after repeated step-size reductions."""

    def __init__(self, message, t):
        super().__init__(message)
        self.t = t


class AdmissibilityError(ValueError):
    """Initial density does not carry the equilibrium mass."""


@dataclass(frozen=True)
class SimConfig:
    n_cells: int = 512
    grading_q: float = 2.0
    dt_init: float = 1e-3
    dt_max: float = 0.05
    cfl: float = 0.9
    t_final: float = 10.0
    newton_tol: float = 1e-12
    newton_max: int = 30
    snapshot_every: float = 1.0
    sample_every: float = 0.25
    nu1: float = 0.1
    nu2: float = 0.1
    max_rejections: int = 20
    growth: float = 1.2
    growth_after: int = 5
    frakE0_max: float = math.inf  # admissible size of the initial perturbation

    def __post_init__(self):
        for name in ("n_cells", "grading_q", "dt_init", "dt_max", "cfl", "newton_tol",
                     "newton_max", "snapshot_every", "sample_every"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.t_final < 0:
            raise ValueError("t_final must be nonnegative")
        if self.cfl > 1:
            raise ValueError("cfl must lie in (0, 1]")
        if self.nu1 < 0 or self.nu2 < 0 or self.nu1 + self.nu2 == 0:
            raise ValueError("viscosities must be nonnegative and not both zero")
        if not self.frakE0_max > 0:
            raise ValueError("frakE0_max must be positive")


# ---------------------------------------------------------------------------
# quadrature of s^2 rho(s) over panels


def _panel_masses(rho, edges, surface_last=True):
    """``int s^2 rho(s) ds`` over each panel ``[edges[k], edges[k+1]]``.

    The last panel, where ``rho`` vanishes like a fractional power of the
    distance to ``edges[-1]``, uses ``s = b - (b - a) t**4``.
    """
    a, b = edges[:-1], edges[1:]
    h = b - a
    s = a[:, None] + h[:, None] * _GL16_X
    out = h * ((s * s * rho(s.ravel()).reshape(s.shape)) @ _GL16_W)
    if surface_last:
        out[-1] = _surface_integral(rho, a[-1], b[-1])
    return out


def _surface_integral(rho, lo, hi):
    """``int_lo^hi s^2 rho`` for ``rho`` vanishing at ``hi``."""
    k = _SURFACE_POWER
    t = _GL16_X
    s = hi - (hi - lo) * t**k
    jac = k * (hi - lo) * t ** (k - 1)
    return float(np.sum(_GL16_W * s * s * rho(s) * jac))


def _eos_code(eos):
    if isinstance(eos, Polytrope):
        return kernels.EOS_POLYTROPE, eos.kappa, eos.gamma
    if isinstance(eos, WhiteDwarf):
        return kernels.EOS_WHITE_DWARF, eos.gamma1, eos.gamma2
    raise TypeError(f"no compiled kernel for {type(eos).__name__}")


@dataclass(frozen=True, eq=False)
class Discretization:
    """Fixed mass-coordinate data derived from one equilibrium profile.

    Masses are per unit solid angle (total ``M / 4 pi``).
    """

    profile: EquilibriumProfile
    xs: np.ndarray
    dm: np.ndarray
    node_mass: np.ndarray
    vol_bar: np.ndarray
    rho_cell: np.ndarray
    p_cell: np.ndarray
    dp_bar: np.ndarray
    eos_code: tuple

    @classmethod
    def from_profile(cls, profile):
        xs = np.asarray(profile.xs, dtype=float)
        dm = _panel_masses(profile.density_at, xs)
        if np.any(dm <= 0):
            raise ValueError("nonpositive cell mass; grid too fine for the profile")
        node_mass = np.zeros_like(xs)
        node_mass[:-1] += 0.5 * dm
        node_mass[1:] += 0.5 * dm
        xl, xr = xs[:-1], xs[1:]
        vol_bar = (xr - xl) * (xr * xr + xr * xl + xl * xl) / 3.0
        rho_cell = dm / vol_bar
        p_cell = np.asarray(profile.eos.pressure(rho_cell), dtype=float)
        p_ext = np.concatenate([[0.0], p_cell, [0.0]])
        dp_bar = p_ext[1:] - p_ext[:-1]
        dp_bar[0] = 0.0
        return cls(profile, xs, dm, node_mass, vol_bar, rho_cell, p_cell, dp_bar,
                   _eos_code(profile.eos))

    @property
    def n_cells(self):
        return len(self.xs) - 1

    @property
    def total_mass(self):
        """Discrete mass ``4 pi sum(dm)``."""
        return FOUR_PI * math.fsum(self.dm)

    def forces(self, d, v, nu1, nu2, dt=0.0, want_jac=False):
        kind, a, b = self.eos_code
        return kernels.forces(self.xs, d, v, self.dm, self.rho_cell, self.dp_bar,
                              float(nu1), float(nu2), kind, a, b, float(dt), bool(want_jac))

    def sound_speed_limit(self, d):
        """``min_k h_k / c_k`` over cells at the current map."""
        _, _, h, vol, dvol = kernels.cell_geometry(self.xs, d)
        rho = self.rho_cell * (1.0 - dvol / vol)
        c = np.sqrt(self.profile.eos.dp(np.maximum(rho, 0.0)))
        with np.errstate(divide="ignore"):
            return float(np.min(np.where(c > 0, h / c, np.inf)))

    def potential_energy(self, d):
        """Potential energy relative to equilibrium, free of cancellation."""
        _, _, _, vol, dvol = kernels.cell_geometry(self.xs, d)
        delta = -dvol / vol
        bregman = self.profile.eos.potential_bregman(self.rho_cell, delta)
        x = self.xs
        r = x + d
        with np.errstate(divide="ignore", invalid="ignore"):
            node = np.where(r > 0, d * d * (x * x / r + x + d / 3.0), 0.0)
        return math.fsum(self.dm * bregman) + math.fsum(self.dp_bar * node)


@dataclass(frozen=True, eq=False)
class SimState:
    """Snapshot of the Lagrangian state.  ``d = r - x``; ``r`` is derived."""

    xs: np.ndarray
    d: np.ndarray
    v: np.ndarray
    t: float
    nu1: float
    nu2: float
    profile: EquilibriumProfile
    disc: Discretization = field(repr=False, default=None)

    def __post_init__(self):
        if self.disc is None:
            object.__setattr__(self, "disc", Discretization.from_profile(self.profile))

    @property
    def r(self):
        return self.xs + self.d

    @property
    def nu(self):
        return 4.0 * self.nu1 / 3.0 + self.nu2

    @property
    def R(self):
        """Outer radius ``r(R_bar, t)``."""
        return float(self.r[-1])

    @cached_property
    def acceleration(self):
        return momentum_rhs(self)

    def with_fields(self, d, v, t):
        return SimState(self.xs, d, v, t, self.nu1, self.nu2, self.profile, self.disc)

    def validate(self):
        _, _, h, _, _ = kernels.cell_geometry(self.xs, self.d)
        if self.d[0] != 0.0 or self.v[0] != 0.0:
            raise StateInvalidError("centre must stay fixed: r(0) = v(0) = 0")
        if np.any(h <= 0) or not np.all(np.isfinite(self.d)) or not np.all(np.isfinite(self.v)):
            raise StateInvalidError("flow map is not increasing")
        return self


def equilibrium_state(profile, nu1, nu2, disc=None):
    z = np.zeros_like(profile.xs)
    return SimState(profile.xs, z, z.copy(), 0.0, nu1, nu2, profile, disc)


# ---------------------------------------------------------------------------
# pointwise derived fields


def _stencil_weights(z, x0, order):
    """Finite-difference weights at ``x0`` for stencils ``z`` (rows)."""
    width = z.shape[1]
    scale = np.max(np.abs(z - x0[:, None]), axis=1)
    h = (z - x0[:, None]) / scale[:, None]
    k = np.arange(width)
    vander = h[:, None, :] ** k[None, :, None] / factorial(k)[None, :, None]
    rhs = np.zeros((len(x0), width, 1))
    rhs[:, order, 0] = 1.0
    return np.linalg.solve(vander, rhs)[..., 0] / scale[:, None] ** order


def nodal_derivative(f, x, order=1, width=5):
    """Derivative of nodal data from local ``width``-point polynomial stencils.

    Stencils are centred in the interior and one-sided at both ends, so no
    parity of ``f`` about ``x = 0`` is assumed.
    """
    f = np.asarray(f, dtype=float)
    n = len(x)
    if n < width:
        df = np.gradient(f, x, edge_order=2)
        return df if order == 1 else np.gradient(df, x, edge_order=2)
    start = np.clip(np.arange(n) - width // 2, 0, n - width)
    idx = start[:, None] + np.arange(width)[None, :]
    w = _stencil_weights(x[idx], x, order)
    return np.sum(w * f[idx], axis=1)


def peak_abs(f, x):
    """``max |f|`` refined by a parabola through the peak and its neighbours."""
    f = np.asarray(f, dtype=float)
    k = int(np.argmax(np.abs(f)))
    best = abs(f[k])
    if 0 < k < len(f) - 1:
        xs, ys = x[k - 1:k + 2], np.abs(f[k - 1:k + 2])
        c2, c1, c0 = np.polyfit(xs - xs[1], ys, 2)
        if c2 < 0:
            xv = -c1 / (2 * c2)
            if xs[0] - xs[1] <= xv <= xs[2] - xs[1]:
                best = max(best, c0 - c1 * c1 / (4 * c2))
    return float(best)


def ratio_over_x(f, x, centre=None):
    """``f / x``; the centre value is the limit ``f_x(0)`` (given or computed)."""
    out = np.empty_like(f, dtype=float)
    out[1:] = f[1:] / x[1:]
    out[0] = nodal_derivative(f, x)[0] if centre is None else centre
    return out


def density_field(state):
    """``rho = x^2 rho_bar / (r^2 r_x)`` at the nodes."""
    x = state.xs
    b = nodal_derivative(state.d, x)
    rx = 1.0 + b
    r_over_x = 1.0 + ratio_over_x(state.d, x, b[0])
    if np.any(rx <= 0) or np.any(r_over_x <= 0):
        raise StateInvalidError("nonpositive r_x or r/x")
    return state.profile.rho_bar / (r_over_x**2 * rx)


def cell_density(state):
    _, _, _, vol, dvol = kernels.cell_geometry(state.xs, state.d)
    return state.disc.rho_cell * (1.0 - dvol / vol)


def eulerian_mass(state):
    """``4 pi int rho r^2 dr`` from the cell volumes of the current map."""
    _, _, _, vol, _ = kernels.cell_geometry(state.xs, state.d)
    return FOUR_PI * math.fsum(cell_density(state) * vol)


def boundary_stress(v, r, xs, nu1, nu2):
    """Surface stress with one-sided second-order differences at ``x = R_bar``."""
    x0, x1, x2 = xs[-3], xs[-2], xs[-1]
    h1, h2 = x1 - x0, x2 - x1
    c0 = h2 / (h1 * (h1 + h2))
    c1 = -(h1 + h2) / (h1 * h2)
    c2 = (h1 + 2 * h2) / (h2 * (h1 + h2))
    vx = c0 * v[-3] + c1 * v[-2] + c2 * v[-1]
    rx = c0 * r[-3] + c1 * r[-2] + c2 * r[-1]
    vr = v[-1] / r[-1]
    return 4.0 / 3.0 * nu1 * (vx / rx - vr) + nu2 * (vx / rx + 2.0 * vr)


# ---------------------------------------------------------------------------
# dynamics


def momentum_rhs(state):
    """Nodal acceleration ``v_t``; zero at the centre."""
    F, _, _, _, hmin = state.disc.forces(state.d, state.v, state.nu1, state.nu2)
    if hmin <= 0:
        raise StateInvalidError("nonpositive r_x")
    a = np.zeros_like(F)
    a[1:] = F[1:] / state.disc.node_mass[1:]
    return a


def step(state, dt, newton_tol=1e-12, newton_max=30):
    """One backward-Euler step with full Newton iteration on ``v``.

    Returns ``(new_state, iterations)``; raises ``StepRejected`` when the
    iteration fails to converge or folds the map.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    disc = state.disc
    m = disc.node_mass[1:] / dt
    d_old, v_old = state.d, state.v
    v = v_old.copy()
    for it in range(1, newton_max + 1):
        d = d_old + dt * v
        d[0] = 0.0
        F, lo, di, up, hmin = disc.forces(d, v, state.nu1, state.nu2, dt, True)
        if hmin <= 0:
            raise StepRejected("map folded during Newton iteration")
        res = m * (v[1:] - v_old[1:]) - F[1:]
        if not np.all(np.isfinite(res)):
            raise StepRejected("non-finite residual")
        diag = m - di[1:]
        lower = -lo[1:]
        upper = -up[1:]
        dv = kernels.solve_tridiagonal(lower, diag, upper, -res)
        v[1:] += dv
        step_size = float(np.max(np.abs(dv)))
        scale = float(np.max(np.abs(v)))
        if step_size <= newton_tol * scale or step_size == 0.0:
            d = d_old + dt * v
            d[0] = 0.0
            _, _, h, _, _ = kernels.cell_geometry(state.xs, d)
            if np.any(h <= 0):
                raise StepRejected("map folded")
            return state.with_fields(d, v, state.t + dt), it
    raise StepRejected(f"Newton did not converge in {newton_max} iterations")


# ---------------------------------------------------------------------------
# initial data


def initial_map(rho0, profile, R0, mass_rtol=1e-8):
    """Flow map ``r0`` carrying the equilibrium mass onto the density ``rho0``.

    ``rho0`` is a callable density on ``[0, R0]`` vanishing at ``R0``.  The
    equation ``int_{r0(x)}^{R0} s^2 rho0 = int_x^{R_bar} s^2 rho_bar`` is
    solved node by node; working with mass above the node keeps relative
    precision near the surface.
    """
    xs = profile.xs
    R_bar = profile.R_bar
    ref_edges = xs
    edges = xs * (R0 / R_bar)
    edges[-1] = R0
    above_ref = _mass_above(_panel_masses(profile.density_at, ref_edges))
    panels0 = _panel_masses(rho0, edges)
    above0 = _mass_above(panels0)
    total_ref, total0 = above_ref[0], above0[0]
    if abs(total0 - total_ref) > mass_rtol * total_ref:
        raise AdmissibilityError(
            f"initial mass {FOUR_PI * total0:.12g} differs from equilibrium mass "
            f"{FOUR_PI * total_ref:.12g}"
        )
    # absorb the admissible mismatch into the central cell
    target = above_ref * (total0 / total_ref)
    r0 = np.empty_like(xs)
    r0[0], r0[-1] = 0.0, R0
    n = len(xs) - 1
    for j in range(1, n):
        goal = target[j]
        k = int(np.searchsorted(-above0, -goal, side="right")) - 1
        k = min(max(k, 0), n - 1)
        lo, hi = edges[k], edges[k + 1]
        last = k == n - 1

        def partial(rr, lo=lo, hi=hi, k=k, last=last):
            # mass above rr inside panel k plus everything beyond it
            if last:
                return _surface_integral(rho0, rr, hi) + above0[k + 1]
            return _panel_masses(rho0, np.array([rr, hi]), surface_last=False)[0] + above0[k + 1]

        f_lo = partial(lo) - goal
        f_hi = above0[k + 1] - goal
        if f_lo == 0.0 or f_hi == 0.0 or (f_lo > 0) == (f_hi > 0):
            # root on a panel edge, up to rounding in the accumulated masses
            r0[j] = lo if abs(f_lo) <= abs(f_hi) else hi
        else:
            r0[j] = brentq(lambda rr: partial(rr) - goal, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps)
    if np.any(np.diff(r0) <= 0):
        raise AdmissibilityError("initial map is not strictly increasing")
    return r0


def _mass_above(panels):
    """Mass beyond each node, accumulated from the surface inward."""
    out = np.zeros(len(panels) + 1)
    out[:-1] = np.cumsum(panels[::-1])[::-1]
    return out


@dataclass(frozen=True)
class Perturbation:
    """Compatible initial perturbation of the equilibrium.

    ``velocity_bump``: ``v0 = eps x (1 + beta1 s^2 + beta2 s^4)``, ``s = x/R_bar``,
    ``r0 = x``.  Unless given, ``beta1`` and ``beta2`` are solved so that the
    discrete surface stress vanishes and the viscous force stays bounded at
    the surface (which keeps ``rho_bar^{1/2} v_t`` square integrable).
    ``map_dilation``: ``r0`` from the mass-preserving dilation
    ``rho0(s) = rho_bar(s / lam) / lam^3`` with ``lam = 1 + eps``, ``v0 = 0``.
    """

    kind: str = "velocity_bump"
    epsilon: float = 1e-3
    beta1: float | None = None
    beta2: float | None = None

    KINDS = ("velocity_bump", "map_dilation")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.kind == "map_dilation" and not 1.0 + self.epsilon > 0:
            raise ValueError("dilation factor must be positive")

    def shape_coefficients(self, xs, nu1, nu2):
        """``(beta1, beta2)`` for the velocity bump on grid ``xs``."""
        if self.beta1 is not None and self.beta2 is not None:
            return self.beta1, self.beta2
        s = xs / xs[-1]
        B = [boundary_stress(xs * s**k, xs, xs, nu1, nu2) for k in (0, 2, 4)]
        # surface viscous force of x s^k: ((4/3) nu1 + nu2) g'' + (4/3 + 4) nu1 g'
        # + 4 nu2 g' with g = s^k evaluated at s = 1
        C = [0.0] + [
            4.0 / 3.0 * nu1 * (k + k * (k - 1)) + nu2 * (4 * k + k * (k - 1)) + 4.0 * nu1 * k
            for k in (2, 4)
        ]
        if self.beta1 is not None:
            b1 = self.beta1
            return b1, -(B[0] + b1 * B[1]) / B[2]
        A = np.array([[B[1], B[2]], [C[1], C[2]]])
        rhs = -np.array([B[0], C[0]])
        b1, b2 = np.linalg.solve(A, rhs)
        return float(b1), float(b2)

    def initial_data(self, profile, nu1, nu2):
        xs = profile.xs
        if self.epsilon == 0.0:
            return xs.copy(), np.zeros_like(xs)
        if self.kind == "velocity_bump":
            s2 = (xs / xs[-1]) ** 2
            b1, b2 = self.shape_coefficients(xs, nu1, nu2)
            v = self.epsilon * xs * (1.0 + b1 * s2 + b2 * s2 * s2)
            v[0] = 0.0
            return xs.copy(), v
        lam = 1.0 + self.epsilon

        def rho0(s):
            return profile.density_at(np.asarray(s) / lam) / lam**3

        r0 = initial_map(rho0, profile, lam * profile.R_bar)
        return r0, np.zeros_like(xs)


def make_compatible_perturbation(profile, kind, epsilon, nu1=0.1, nu2=0.1, **shape):
    """Return ``(Perturbation, r0, v0)`` satisfying ``v0(0) = 0`` and zero surface stress."""
    pert = Perturbation(kind=kind, epsilon=epsilon, **shape)
    r0, v0 = pert.initial_data(profile, nu1, nu2)
    return pert, r0, v0


def initial_state(profile, perturbation, nu1, nu2, disc=None):
    r0, v0 = perturbation.initial_data(profile, nu1, nu2)
    d0 = r0 - profile.xs
    if perturbation.kind == "map_dilation" and perturbation.epsilon != 0.0:
        # exact dilation where the solver reproduces it to rounding
        d0[0] = 0.0
    state = SimState(profile.xs, d0, v0, 0.0, nu1, nu2, profile, disc)
    return state.validate()


# ---------------------------------------------------------------------------
# driver


@dataclass
class Trajectory:
    snapshots: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    step_t: list = field(default_factory=list)
    step_dt: list = field(default_factory=list)
    step_lyapunov: list = field(default_factory=list)
    step_newton: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    status: str = "ok"
    failure_time: float | None = None
    failure_message: str | None = None
    rejections: int = 0

    @property
    def final(self):
        return self.snapshots[-1] if self.snapshots else None

    def lyapunov_increments(self):
        """Relative increase of the discrete energy per accepted step."""
        L = np.asarray(self.step_lyapunov)
        if len(L) < 2:
            return np.zeros(0)
        scale = np.maximum(np.abs(L[:-1]), np.finfo(float).tiny)
        return (L[1:] - L[:-1]) / scale


SMALL_MAP = 0.125
SMALL_VELOCITY = 1.0


def simulation_profile(profile, cfg):
    """Profile on the simulation grid (re-integrated if the resolution differs)."""
    if profile.n_cells == cfg.n_cells and profile.grading_q == cfg.grading_q:
        return profile
    return integrate_profile(profile.eos, profile.rho_c, profile.G,
                             n_cells=cfg.n_cells, grading_q=cfg.grading_q, estimate_error=False)


def run(profile, perturbation, cfg, diagnostics=None,
        on_sample: Callable | None = None):
    """Integrate from the perturbed equilibrium to ``cfg.t_final``.

    ``diagnostics`` is a :class:`vacstar.diagnostics.DiagnosticsConfig`; an
    energy report is taken every ``cfg.sample_every`` and a snapshot every
    ``cfg.snapshot_every``.  Step failures end the run with
    ``status = "failed"`` and keep everything produced so far.
    """
    from .diagnostics import DiagnosticsConfig, energy_report

    diagnostics = diagnostics or DiagnosticsConfig()
    profile = simulation_profile(profile, cfg)
    disc = Discretization.from_profile(profile)
    state = initial_state(profile, perturbation, cfg.nu1, cfg.nu2, disc)
    traj = Trajectory()

    def sample(st, snapshot):
        rep = energy_report(st, diagnostics)
        traj.reports.append(rep)
        small = (max(rep.sup_norms["rx_minus_1"], rep.sup_norms["r_over_x_minus_1"]) <= SMALL_MAP
                 and max(rep.sup_norms["vx"], rep.sup_norms["v_over_x"]) <= SMALL_VELOCITY)
        if not small:
            msg = f"t={st.t:.6g}: state left the small-perturbation regime"
            if not traj.flags or traj.flags[-1] != msg:
                log.warning(msg)
            traj.flags.append(msg)
        if snapshot:
            traj.snapshots.append(st)
        if on_sample is not None:
            on_sample(st, rep)

    lyap = disc.potential_energy(state.d) + 0.5 * float(np.dot(disc.node_mass, state.v**2))
    traj.step_t.append(0.0)
    traj.step_dt.append(0.0)
    traj.step_lyapunov.append(lyap)
    traj.step_newton.append(0)
    sample(state, True)
    frak0 = traj.reports[0].frakE
    if frak0 > cfg.frakE0_max:
        raise AdmissibilityError(
            f"initial perturbation too large: frakE(0) = {frak0:.6g} exceeds {cfg.frakE0_max:.6g}")

    t_final = cfg.t_final
    n_sample, n_snap = 1, 1
    dt = cfg.dt_init
    accepted_run = 0
    eps_t = 1e-12 * max(t_final, 1.0)
    while state.t < t_final - eps_t:
        t_sample = min(n_sample * cfg.sample_every, t_final)
        t_snap = min(n_snap * cfg.snapshot_every, t_final)
        t_next = min(t_sample, t_snap)
        dt = min(dt, cfg.dt_max, cfg.cfl * disc.sound_speed_limit(state.d))
        h = min(dt, t_next - state.t)
        landing = h >= t_next - state.t - eps_t
        rejections = 0
        while True:
            try:
                new, its = step(state, h, cfg.newton_tol, cfg.newton_max)
                break
            except StepRejected as exc:
                rejections += 1
                traj.rejections += 1
                if rejections > cfg.max_rejections:
                    traj.status = "failed"
                    traj.failure_time = state.t
                    traj.failure_message = str(exc)
                    log.error("step failure at t=%.6g: %s", state.t, exc)
                    return traj
                h *= 0.5
                dt = h
                landing = False
                accepted_run = 0
        if landing:
            new = new.with_fields(new.d, new.v, t_next)
        state = new
        lyap = disc.potential_energy(state.d) + 0.5 * float(np.dot(disc.node_mass, state.v**2))
        traj.step_t.append(state.t)
        traj.step_dt.append(h)
        traj.step_lyapunov.append(lyap)
        traj.step_newton.append(its)
        accepted_run += 1
        if accepted_run >= cfg.growth_after and not landing:
            dt = min(dt * cfg.growth, cfg.dt_max)
            accepted_run = 0
        if landing:
            at_sample = abs(state.t - t_sample) <= eps_t
            at_snap = abs(state.t - t_snap) <= eps_t
            if at_sample:
                n_sample += 1
            if at_snap:
                n_snap += 1
            if at_sample or at_snap:
                sample(state, at_snap)
    if not traj.snapshots or traj.snapshots[-1].t != state.t:
        traj.snapshots.append(state)
    return traj
