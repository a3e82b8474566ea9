"""Hydrostatic equilibria of a self-gravitating gas ball.

The stationary profile solves ``p(rho)_r = -G rho m(r) / r**2``.  Writing it
in terms of the enthalpy ``i(rho)`` gives the regular system

    di/dr = -G m / r**2,     dm/dr = 4 pi r**2 rho(i),

which is integrated outward from the centre.  Once the enthalpy has dropped
to half its central value the enthalpy itself becomes the independent
variable, so the vacuum radius is simply ``r(i = 0)`` and the surface layer
is resolved in relative terms.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.integrate import cumulative_simpson, solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .eos import EquationOfState

__all__ = [
    "EquilibriumError",
    "UnboundProfileError",
    "BracketError",
    "ExceedsCriticalMassError",
    "EquilibriumProfile",
    "ShootingConfig",
    "MassCurve",
    "graded_grid",
    "integrate_profile",
    "solve_for_mass",
    "critical_mass_scan",
    "equilibrium_residual",
    "pressure_gradient_scale",
    "enthalpy_distance_check",
]

FOUR_PI = 4.0 * math.pi
_RTOL_FLOOR = 3e-14


class EquilibriumError(ArithmeticError):
    pass


class UnboundProfileError(EquilibriumError):
    """The enthalpy never reaches zero: no finite vacuum radius."""


class BracketError(EquilibriumError):
    """The central-density bracket does not straddle the target mass."""


class ExceedsCriticalMassError(EquilibriumError):
    """Target mass above the largest mass found for this pressure law."""


def graded_grid(R, n_cells, q=2.0):
    """Nodes ``x_j = R (1 - (1 - j/N)**q)``, clustered toward ``x = R``."""
    s = 1.0 - np.arange(n_cells + 1) / n_cells
    xs = R * (1.0 - s**q)
    xs[-1] = R
    return xs


def distance_to_surface(R, n_cells, q=2.0):
    """``R - x_j`` computed without cancellation."""
    s = 1.0 - np.arange(n_cells + 1) / n_cells
    return R * s**q


@dataclass(frozen=True)
class EquilibriumProfile:
    """A discretised stationary star.

    ``m`` holds the enclosed mass ``4 pi int_0^x s^2 rho ds`` at the nodes,
    taken from the integrator; ``error`` is an estimate of the absolute
    error in ``(R_bar, M)``.
    """

    xs: np.ndarray
    rho_bar: np.ndarray
    R_bar: float
    M: float
    rho_c: float
    phi: np.ndarray
    i_bar: np.ndarray
    G: float
    m: np.ndarray
    eos: EquationOfState
    grading_q: float = 2.0
    error: tuple = (0.0, 0.0)
    depth: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.depth is None:
            object.__setattr__(self, "depth", self.R_bar - self.xs)

    @property
    def n_cells(self):
        return len(self.xs) - 1

    @property
    def pressure(self):
        return self.eos.pressure(self.rho_bar)

    @classmethod
    def from_density(cls, xs, rho, eos, G=1.0, m=None, rho_c=None):
        """Wrap an arbitrary sampled density as a profile (for checks and tests).

        ``m`` defaults to a cumulative Simpson quadrature of ``4 pi x^2 rho``.
        """
        xs = np.asarray(xs, dtype=float)
        rho = np.asarray(rho, dtype=float)
        if m is None:
            m = np.concatenate([[0.0], cumulative_simpson(FOUR_PI * xs**2 * rho, x=xs)])
        m = np.asarray(m, dtype=float)
        phi = np.empty_like(xs)
        phi[1:] = G * m[1:] / xs[1:] ** 3
        phi[0] = FOUR_PI * G * rho[0] / 3.0
        return cls(
            xs=xs,
            rho_bar=rho,
            R_bar=float(xs[-1]),
            M=float(m[-1]),
            rho_c=float(rho[0] if rho_c is None else rho_c),
            phi=phi,
            i_bar=np.asarray(eos.enthalpy(rho), dtype=float),
            G=G,
            m=m,
            eos=eos,
        )

    @cached_property
    def _i_spline(self):
        return CubicSpline(self.xs, self.i_bar)

    def enthalpy_at(self, r):
        """Enthalpy of the stationary density at arbitrary radii (0 outside)."""
        spline = self._i_spline
        r = np.asarray(r, dtype=float)
        out = np.where((r >= 0) & (r <= self.R_bar), spline(np.clip(r, 0, self.R_bar)), 0.0)
        return np.maximum(out, 0.0)

    def density_at(self, r):
        return self.eos.inverse_enthalpy(self.enthalpy_at(r))


@dataclass(frozen=True)
class ShootingConfig:
    target_mass: float
    rho_c_bracket: tuple = (1e-3, 1e3)
    tol_mass: float = 1e-10
    ode_tol: float = 1e-10
    max_iter: int = 200

    def __post_init__(self):
        lo, hi = self.rho_c_bracket
        if not (0 < lo < hi):
            raise ValueError("rho_c bracket must satisfy 0 < low < high")
        if not (self.tol_mass > 0 and self.ode_tol > 0 and self.target_mass > 0):
            raise ValueError("target mass and tolerances must be positive")


class _Solution:
    """Two-phase ODE solution of the enthalpy system."""

    def __init__(self, eos, rho_c, G, rtol, r_max_factor=1e6):
        self.eos, self.rho_c, self.G = eos, rho_c, G
        ic = float(eos.enthalpy(rho_c))
        self.ic = ic
        scale = math.sqrt(ic / (G * rho_c))
        self.r_start = r0 = 1e-6 * scale
        # second-order series about the centre (removable singularity of G m / r^2)
        y0 = [ic - 2.0 * math.pi * G * rho_c * r0**2 / 3.0, FOUR_PI * rho_c * r0**3 / 3.0]
        inv = eos.inverse_enthalpy

        def core(r, y):
            rho = inv(y[0]) if y[0] > 0 else 0.0
            return [-G * y[1] / (r * r), FOUR_PI * r * r * rho]

        def half(r, y):
            return y[0] - 0.5 * ic

        half.terminal = True
        r_max = r_max_factor * scale
        s1 = solve_ivp(core, (r0, r_max), y0, method="DOP853", rtol=rtol, atol=1e-300,
                       events=half, dense_output=True)
        if s1.status != 1:
            raise UnboundProfileError(
                f"enthalpy did not fall to half its central value within r={r_max:g}"
            )
        self.core = s1
        self.r_switch = r_s = float(s1.t_events[0][0])
        m_s = float(s1.y_events[0][0][1])
        self.i_switch = 0.5 * ic

        def envelope(i, y):
            r, m = y
            rho = inv(i) if i > 0 else 0.0
            drdi = -r * r / (G * m)
            return [drdi, FOUR_PI * r * r * rho * drdi]

        def runaway(i, y):
            return y[0] - r_max

        runaway.terminal = True
        s2 = solve_ivp(envelope, (0.5 * ic, 0.0), [r_s, m_s], method="DOP853", rtol=rtol,
                       atol=1e-300, events=runaway, dense_output=True)
        if s2.status != 0 or not np.isfinite(s2.y[:, -1]).all():
            raise UnboundProfileError("envelope radius diverges before the enthalpy vanishes")
        self.envelope = s2
        self.R = float(s2.y[0, -1])
        self.M = float(s2.y[1, -1])

    def at_nodes(self, xs, depth):
        """Enthalpy and enclosed mass at nodes; ``depth = R - xs`` exactly."""
        G, ic, rho_c = self.G, self.ic, self.rho_c
        i = np.empty_like(xs)
        m = np.empty_like(xs)
        inner = xs <= self.r_switch
        tiny = inner & (xs < self.r_start)
        mid = inner & ~tiny
        if mid.any():
            yy = self.core.sol(xs[mid])
            i[mid], m[mid] = yy[0], yy[1]
        rt = xs[tiny]
        i[tiny] = ic - 2.0 * math.pi * G * rho_c * rt**2 / 3.0
        m[tiny] = FOUR_PI * rho_c * rt**3 / 3.0
        outer = ~inner
        if outer.any():
            i[outer], m[outer] = self._invert_envelope(xs[outer], depth[outer])
        i[-1], m[-1] = 0.0, self.M
        return i, m

    def _invert_envelope(self, x, depth):
        sol = self.envelope.sol
        table_i = np.linspace(self.i_switch, 0.0, 2001)
        table_r = sol(table_i)[0]
        guess = np.interp(x, table_r, table_i)
        i = guess.copy()
        for _ in range(60):
            r, m = sol(i)
            # r(i) - x = (r(i) - R) + depth, keeps relative accuracy near the surface
            f = (r - self.R) + depth
            step = f / (-r * r / (self.G * m))
            i_new = np.clip(i - step, 0.0, self.i_switch)
            done = np.abs(i_new - i) <= 1e-15 * np.maximum(i_new, 1e-300) + 1e-300
            i = i_new
            if done.all():
                break
        return i, sol(i)[1]


def _internal_rtol(ode_tol):
    return max(1e-4 * ode_tol, _RTOL_FLOOR)


def _bulk(eos, rho_c, G, ode_tol):
    sol = _Solution(eos, rho_c, G, _internal_rtol(ode_tol))
    return sol.R, sol.M


def integrate_profile(eos, rho_c, G=1.0, ode_tol=1e-10, n_cells=2048, grading_q=2.0,
                      estimate_error=True):
    """Integrate the equilibrium from the centre to the vacuum radius.

    Returns an :class:`EquilibriumProfile` sampled on the graded grid with
    ``n_cells`` cells.  Raises :class:`UnboundProfileError` when the star has
    no finite radius.
    """
    if not rho_c > 0:
        raise ValueError("central density must be positive")
    sol = _Solution(eos, rho_c, G, _internal_rtol(ode_tol))
    err = (0.0, 0.0)
    if estimate_error:
        coarse = _Solution(eos, rho_c, G, _internal_rtol(10.0 * ode_tol))
        err = (abs(coarse.R - sol.R), abs(coarse.M - sol.M))
    R = sol.R
    xs = graded_grid(R, n_cells, grading_q)
    depth = distance_to_surface(R, n_cells, grading_q)
    i, m = sol.at_nodes(xs, depth)
    rho = np.asarray(eos.inverse_enthalpy(i), dtype=float)
    rho[0] = rho_c
    rho[-1] = 0.0
    phi = np.empty_like(xs)
    phi[1:] = G * m[1:] / xs[1:] ** 3
    phi[0] = FOUR_PI * G * rho_c / 3.0
    return EquilibriumProfile(
        xs=xs, rho_bar=rho, R_bar=R, M=sol.M, rho_c=float(rho_c), phi=phi, i_bar=i,
        G=G, m=m, eos=eos, grading_q=grading_q, error=err, depth=depth,
    )


def solve_for_mass(eos, cfg, G=1.0, n_cells=2048, grading_q=2.0):
    """Find the central density whose equilibrium carries ``cfg.target_mass``."""
    lo, hi = cfg.rho_c_bracket
    target = cfg.target_mass

    def mass(rc):
        return _bulk(eos, rc, G, cfg.ode_tol)[1]

    m_lo, m_hi = mass(lo), mass(hi)
    if target > m_hi:
        if math.isfinite(eos.kappa_limit):
            grid = np.geomspace(lo, hi, 24)
            peak = max(m_hi, *(mass(rc) for rc in grid))
            if target > peak:
                raise ExceedsCriticalMassError(
                    f"target mass {target:g} exceeds the largest mass {peak:g} "
                    f"found for central densities up to {hi:g}"
                )
        raise BracketError(f"M({hi:g}) = {m_hi:g} is below the target {target:g}")
    if target < m_lo:
        raise BracketError(f"M({lo:g}) = {m_lo:g} is above the target {target:g}")

    def f(log_rc):
        return mass(math.exp(log_rc)) / target - 1.0

    log_rc = brentq(f, math.log(lo), math.log(hi), xtol=1e-15, rtol=4 * np.finfo(float).eps,
                    maxiter=cfg.max_iter)
    prof = integrate_profile(eos, math.exp(log_rc), G, cfg.ode_tol, n_cells, grading_q)
    if abs(prof.M - target) > cfg.tol_mass * target:
        raise EquilibriumError(
            f"mass shooting stalled at relative error {abs(prof.M / target - 1):.3e}"
        )
    return prof


@dataclass
class MassCurve:
    """Sampled mass-radius relation along a central-density scan."""

    rho_c: np.ndarray
    M: np.ndarray
    R: np.ndarray
    running_max: np.ndarray
    failures: list
    plateau_tol: float = 0.05

    @property
    def M_c_estimate(self):
        finite = self.running_max[np.isfinite(self.running_max)]
        return float(finite[-1]) if finite.size else math.nan

    @property
    def last_decade_increment(self):
        """Relative mass increase over the last decade of central density."""
        ok = np.isfinite(self.M)
        if ok.sum() < 2:
            return math.nan
        rc, M = self.rho_c[ok], self.M[ok]
        start = np.searchsorted(rc, rc[-1] / 10.0)
        start = min(start, len(rc) - 2)
        return float((M[-1] - M[start]) / M[start])

    @property
    def rising_at_edge(self):
        """True while the curve still climbs by more than ``plateau_tol`` per decade."""
        inc = self.last_decade_increment
        return bool(math.isnan(inc) or inc >= self.plateau_tol)


def _scan_point(args):
    eos, rc, G, ode_tol = args
    try:
        R, M = _bulk(eos, rc, G, ode_tol)
        return R, M, None
    except (EquilibriumError, ArithmeticError, ValueError) as exc:
        return math.nan, math.nan, f"{type(exc).__name__}: {exc}"


def critical_mass_scan(eos, rho_c_grid, G=1.0, ode_tol=1e-10, workers=1, plateau_tol=0.05):
    """Sample ``M(rho_c)`` and ``R(rho_c)``; failures are recorded, not raised."""
    rc = np.asarray(rho_c_grid, dtype=float)
    if rc.size and (np.any(rc <= 0) or np.any(np.diff(rc) <= 0)):
        raise ValueError("central-density grid must be positive and increasing")
    jobs = [(eos, float(r), G, ode_tol) for r in rc]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_scan_point, jobs))
    else:
        results = [_scan_point(j) for j in jobs]
    R = np.array([r[0] for r in results], dtype=float)
    M = np.array([r[1] for r in results], dtype=float)
    failures = [(float(rc[k]), r[2]) for k, r in enumerate(results) if r[2]]
    running = np.fmax.accumulate(M) if M.size else M.copy()
    return MassCurve(rc, M, R, running, failures, plateau_tol)


def equilibrium_residual(profile, eos=None):
    """RMS over interior nodes of ``p(rho)_r + G rho m / r^2``.

    ``p(rho)_r`` is evaluated as ``rho * i_r`` with a cubic-spline derivative
    of the nodal enthalpy, and the enclosed mass is the profile's own ``m``.
    """
    di = CubicSpline(profile.xs, profile.i_bar)(profile.xs, 1)
    x = profile.xs[1:-1]
    rho = profile.rho_bar[1:-1]
    res = rho * di[1:-1] + profile.G * rho * profile.m[1:-1] / x**2
    return float(np.sqrt(np.mean(res**2)))


def pressure_gradient_scale(profile):
    """``max |p(rho)_r|`` over interior nodes, for normalising residuals."""
    x = profile.xs[1:-1]
    return float(np.max(np.abs(profile.G * profile.rho_bar[1:-1] * profile.m[1:-1] / x**2)))


@dataclass
class EnthalpyDistanceReport:
    K8: float
    K9: float
    passed: bool
    worst_lower: float
    worst_upper: float


def enthalpy_distance_check(profile, atol=1e-9):
    """Check ``K8 (R - x) <= i(rho(x)) <= K9 (R - x)`` at every node."""
    R, M, G = profile.R_bar, profile.M, profile.G
    K8 = M * G / (2.0 * R * R)
    K9 = FOUR_PI * G * profile.rho_c * R / 3.0
    depth = profile.depth
    lower = profile.i_bar - K8 * depth
    upper = K9 * depth - profile.i_bar
    ok = bool(np.all(lower >= -atol) and np.all(upper >= -atol))
    return EnthalpyDistanceReport(K8, K9, ok, float(lower.min()), float(upper.min()))
