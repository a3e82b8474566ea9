"""Time the compiled and numpy force kernels on a realistic state.

    python3 benchmarks/bench_kernels.py [--cells 512 2048] [--repeat 200]
"""

import argparse
import timeit

import numpy as np

from vacstar import _kernels_py
from vacstar.eos import Polytrope, WhiteDwarf
from vacstar.equilibrium import integrate_profile
from vacstar.simulator import Discretization

try:
    from vacstar import _kernels
except ImportError:
    _kernels = None


def case(eos, n):
    prof = integrate_profile(eos, 1.0, n_cells=n, estimate_error=False)
    disc = Discretization.from_profile(prof)
    rng = np.random.default_rng(1)
    x = disc.xs
    d = 1e-4 * x * (1 - x / x[-1]) * rng.standard_normal(len(x))
    d[0] = 0.0
    v = 1e-3 * x * rng.standard_normal(len(x))
    v[0] = 0.0
    kind, a, b = disc.eos_code
    args = (x, d, v, disc.dm, disc.rho_cell, disc.dp_bar, 0.1, 0.1, kind, a, b, 1e-3, True)
    return args


def bench(mod, args, repeat):
    def work():
        F, lo, di, up, _ = mod.forces(*args)
        mod.solve_tridiagonal(-lo[1:], 1e3 - di[1:], -up[1:], F[1:].copy())
    return min(timeit.repeat(work, number=repeat, repeat=3)) / repeat


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cells", type=int, nargs="+", default=[512, 2048])
    ap.add_argument("--repeat", type=int, default=200)
    ns = ap.parse_args()
    print(f"{'eos':<12}{'cells':>7}{'numpy [us]':>13}{'compiled [us]':>15}{'speedup':>9}")
    for name, eos in (("polytrope", Polytrope(1.0, 2.0)), ("white_dwarf", WhiteDwarf(1.0, 1.0))):
        for n in ns.cells:
            args = case(eos, n)
            t_py = bench(_kernels_py, args, ns.repeat)
            if _kernels is None:
                print(f"{name:<12}{n:>7}{t_py * 1e6:>13.1f}{'n/a':>15}")
                continue
            t_c = bench(_kernels, args, ns.repeat)
            print(f"{name:<12}{n:>7}{t_py * 1e6:>13.1f}{t_c * 1e6:>15.1f}{t_py / t_c:>9.1f}")


if __name__ == "__main__":
    main()
