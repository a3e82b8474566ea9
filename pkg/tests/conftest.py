import math

import numpy as np
import pytest

from vacstar.eos import Polytrope, WhiteDwarf
from vacstar.equilibrium import integrate_profile

LANE_EMDEN_R = math.sqrt(math.pi / 2)
LANE_EMDEN_M = math.sqrt(2 * math.pi)


def lane_emden_density(r, rho_c=1.0):
    """Closed-form n = 1 density for kappa = G = 1."""
    a = math.sqrt(2 * math.pi)
    r = np.asarray(r, dtype=float)
    return rho_c * np.sinc(a * r / math.pi)


@pytest.fixture(scope="session")
def poly2_profile():
    return integrate_profile(Polytrope(1.0, 2.0), 1.0, n_cells=512)


@pytest.fixture(scope="session")
def poly53_profile():
    return integrate_profile(Polytrope(1.0, 5.0 / 3.0), 1.0, n_cells=512)


@pytest.fixture(scope="session")
def wd_profile():
    return integrate_profile(WhiteDwarf(1.0, 1.0), 1.0, n_cells=512)
