import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from vacstar.eos import Polytrope, WhiteDwarf
from vacstar.equilibrium import (
    BracketError,
    EquilibriumProfile,
    ExceedsCriticalMassError,
    ShootingConfig,
    critical_mass_scan,
    enthalpy_distance_check,
    equilibrium_residual,
    graded_grid,
    integrate_profile,
    pressure_gradient_scale,
    solve_for_mass,
)

from conftest import LANE_EMDEN_M, LANE_EMDEN_R, lane_emden_density


def test_graded_grid_clusters_at_surface():
    xs = graded_grid(2.0, 8)
    assert xs[0] == 0.0 and xs[-1] == 2.0
    h = np.diff(xs)
    assert np.all(np.diff(h) < 0)


def test_lane_emden_closed_form():
    prof = integrate_profile(Polytrope(1.0, 2.0), 1.0, n_cells=1024)
    assert prof.R_bar == pytest.approx(LANE_EMDEN_R, rel=1e-8)
    assert prof.M == pytest.approx(LANE_EMDEN_M, rel=1e-8)
    assert prof.rho_bar[0] == 1.0
    np.testing.assert_allclose(prof.rho_bar, lane_emden_density(prof.xs), atol=1e-8)


def test_lane_emden_radius_independent_of_central_density():
    prof = integrate_profile(Polytrope(1.0, 2.0), 4.0, n_cells=256)
    assert prof.R_bar == pytest.approx(LANE_EMDEN_R, rel=1e-8)
    assert prof.M == pytest.approx(4 * LANE_EMDEN_M, rel=1e-8)


def test_profile_against_independent_integration():
    """gamma = 5/3 radius and mass against a plain density-form integration."""
    eos = Polytrope(1.0, 5 / 3)
    prof = integrate_profile(eos, 1.0, n_cells=256)

    def rhs(r, y):
        rho, m = y
        rho = max(rho, 0.0)
        if r == 0:
            return [0.0, 0.0]
        return [-rho * m / (r * r) / eos.dp(rho) if rho > 0 else 0.0, 4 * math.pi * r * r * rho]

    surface = lambda r, y: y[0] - 1e-9
    surface.terminal = True
    r0 = 1e-6
    y0 = [1.0 - (2 * math.pi / 3) * r0**2 / eos.dp(1.0), 4 * math.pi * r0**3 / 3]
    sol = solve_ivp(rhs, (r0, 10.0), y0, events=surface, rtol=1e-11, atol=1e-14)
    R_est = sol.t_events[0][0]
    assert prof.R_bar == pytest.approx(R_est, rel=1e-4)
    assert prof.M == pytest.approx(sol.y_events[0][0][1], rel=1e-4)


def test_solve_for_mass_recovers_central_density():
    eos = Polytrope(1.0, 2.0)
    prof = solve_for_mass(eos, ShootingConfig(LANE_EMDEN_M), n_cells=128)
    assert prof.rho_c == pytest.approx(1.0, rel=1e-9)
    prof = solve_for_mass(eos, ShootingConfig(2 * LANE_EMDEN_M), n_cells=128)
    assert prof.rho_c == pytest.approx(2.0, rel=1e-9)


def test_solve_for_mass_errors():
    with pytest.raises(ExceedsCriticalMassError):
        solve_for_mass(WhiteDwarf(1.0, 1.0), ShootingConfig(1e3, (1.0, 1e6)), n_cells=64)
    with pytest.raises(BracketError):
        solve_for_mass(Polytrope(1.0, 2.0), ShootingConfig(1e-6, (1.0, 10.0)), n_cells=64)


def test_mass_scan_linear_for_gamma_two():
    grid = np.geomspace(1.0, 64.0, 7)
    curve = critical_mass_scan(Polytrope(1.0, 2.0), grid)
    np.testing.assert_allclose(curve.M[1:] / curve.M[:-1], 2.0, rtol=1e-9)
    assert curve.rising_at_edge
    assert not curve.failures


def test_mass_scan_empty_grid():
    curve = critical_mass_scan(Polytrope(1.0, 2.0), [])
    assert curve.M.size == 0 and curve.rho_c.size == 0


def test_mass_scan_rejects_unsorted_grid():
    with pytest.raises(ValueError):
        critical_mass_scan(Polytrope(1.0, 2.0), [2.0, 1.0])


def test_residual_of_solved_profile(poly53_profile, wd_profile):
    for prof in (poly53_profile, wd_profile):
        assert equilibrium_residual(prof) <= 1e-6 * pressure_gradient_scale(prof)


def test_residual_of_closed_form_samples():
    xs = graded_grid(LANE_EMDEN_R, 4096)
    eos = Polytrope(1.0, 2.0)
    a = math.sqrt(2 * math.pi)
    m = 4 * math.pi * (np.sin(a * xs) - a * xs * np.cos(a * xs)) / a**3
    prof = EquilibriumProfile.from_density(xs, lane_emden_density(xs), eos, m=m)
    assert equilibrium_residual(prof) <= 1e-8 * pressure_gradient_scale(prof)


def test_residual_detects_non_equilibrium():
    xs = np.linspace(0, 1, 101)
    prof = EquilibriumProfile.from_density(xs, np.ones_like(xs), Polytrope(1.0, 2.0))
    res = equilibrium_residual(prof)
    # constant density: the residual is the bare gravity term 4 pi rho^2 r / 3
    x = xs[1:-1]
    expected = np.sqrt(np.mean((4 * math.pi * x / 3) ** 2))
    assert res == pytest.approx(expected, rel=1e-3)
    assert res > 0


def test_enthalpy_distance(poly2_profile, wd_profile):
    for prof in (poly2_profile, wd_profile):
        rep = enthalpy_distance_check(prof)
        assert rep.passed
        assert prof.i_bar[-1] == 0.0 and prof.depth[-1] == 0.0


def test_unbound_and_invalid_inputs():
    with pytest.raises(ValueError):
        integrate_profile(Polytrope(1.0, 2.0), 0.0)
