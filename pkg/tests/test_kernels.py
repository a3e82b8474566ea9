import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import solve_banded

from vacstar import _kernels_py, kernels

compiled = pytest.importorskip("vacstar._kernels") if kernels.BACKEND == "compiled" else None

CASES = [(kernels.EOS_POLYTROPE, 1.0, 2.0), (kernels.EOS_POLYTROPE, 1.0, 5 / 3),
         (kernels.EOS_WHITE_DWARF, 1.0, 1.0)]


def random_system(seed, n=40, amp=1e-4):
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 1.0, n + 1)
    x[1:-1] += rng.uniform(-0.3, 0.3, n - 1) / n
    dm = rng.uniform(0.1, 1, n) * 1e-2
    rho = rng.uniform(0.1, 2, n)
    dpb = rng.normal(size=n + 1)
    d = amp * rng.normal(size=n + 1) * x * (1 - x)
    d[0] = 0.0
    v = rng.normal(size=n + 1)
    v[0] = 0.0
    return x, d, v, dm, rho, dpb


def test_cell_geometry_matches_direct():
    x, d, *_ = random_system(1)
    rl, rr, h, vol, dvol = kernels.cell_geometry(x, d)
    r = x + d
    np.testing.assert_allclose(h, np.diff(r), rtol=1e-12)
    np.testing.assert_allclose(vol, (r[1:] ** 3 - r[:-1] ** 3) / 3, rtol=1e-12)
    vol_bar = (x[1:] ** 3 - x[:-1] ** 3) / 3
    np.testing.assert_allclose(dvol, vol - vol_bar, rtol=1e-7, atol=1e-16)


@pytest.mark.parametrize("kind, a, b", CASES)
def test_jacobian_against_finite_differences(kind, a, b):
    x, d, v, dm, rho, dpb = random_system(0)
    dt = 0.3
    args = (dm, rho, dpb, 0.2, 0.1, kind, a, b, dt)
    _, lo, di, up, _ = _kernels_py.forces(x, d, v, *args, True)
    A = np.diag(di) + np.diag(up[:-1], 1) + np.diag(lo[1:], -1)
    n = len(x)
    errs = []
    for e in (1e-4, 1e-5):
        K = np.zeros((n, n))
        for j in range(1, n):
            vp, vm = v.copy(), v.copy()
            vp[j] += e
            vm[j] -= e
            Fp = _kernels_py.forces(x, d + dt * (vp - v), vp, *args, False)[0]
            Fm = _kernels_py.forces(x, d + dt * (vm - v), vm, *args, False)[0]
            K[:, j] = (Fp - Fm) / (2 * e)
        errs.append(np.max(np.abs(A[1:, 1:] - K[1:, 1:])) / np.max(np.abs(K)))
    assert errs[1] < 1e-6
    # central differences: error falls with the square of the step
    assert errs[1] < 0.05 * errs[0] or errs[1] < 1e-10


@pytest.mark.skipif(kernels.BACKEND != "compiled", reason="extension not built")
@pytest.mark.parametrize("kind, a, b", CASES)
def test_backends_agree(kind, a, b):
    x, d, v, dm, rho, dpb = random_system(3)
    args = (dm, rho, dpb, 0.2, 0.1, kind, a, b, 0.1, True)
    out_py = _kernels_py.forces(x, d, v, *args)
    out_c = compiled.forces(x, d, v, *args)
    for p, c in zip(out_py[:4], out_c[:4]):
        np.testing.assert_allclose(c, p, rtol=1e-11, atol=1e-12 * np.max(np.abs(p)))
    assert out_c[4] == pytest.approx(out_py[4], rel=1e-14)


def test_folded_map_reported():
    x, d, v, dm, rho, dpb = random_system(4)
    d = d.copy()
    d[5] = x[6] - x[5] + 1e-3 + d[6]
    F, lo, di, up, hmin = _kernels_py.forces(x, d, v, dm, rho, dpb, 0.1, 0.1, 0, 1.0, 2.0, 0.1, True)
    assert hmin <= 0
    assert F is None


@settings(max_examples=40, deadline=None)
@given(n=st.integers(min_value=1, max_value=30), seed=st.integers(0, 2**31))
def test_tridiagonal_solvers(n, seed):
    rng = np.random.default_rng(seed)
    lower = rng.normal(size=n)
    upper = rng.normal(size=n)
    diag = np.abs(lower) + np.abs(upper) + rng.uniform(1, 2, n)
    rhs = rng.normal(size=n)
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    ref = solve_banded((1, 1), ab, rhs)
    np.testing.assert_allclose(_kernels_py.solve_tridiagonal(lower, diag, upper, rhs), ref,
                               rtol=1e-10, atol=1e-12)
    if compiled is not None:
        np.testing.assert_allclose(compiled.solve_tridiagonal(lower, diag, upper, rhs), ref,
                                   rtol=1e-10, atol=1e-12)


def test_pure_python_switch():
    env = dict(os.environ, VACSTAR_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from vacstar import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
