"""Backend selection for the force kernels.

The compiled extension is used when it was built; set ``VACSTAR_PURE_PYTHON=1``
to force the numpy implementation.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("VACSTAR_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"

EOS_POLYTROPE = _kernels_py.EOS_POLYTROPE
EOS_WHITE_DWARF = _kernels_py.EOS_WHITE_DWARF

forces = _impl.forces
solve_tridiagonal = _impl.solve_tridiagonal
cell_geometry = _kernels_py.cell_geometry

__all__ = ["BACKEND", "forces", "solve_tridiagonal", "cell_geometry",
           "EOS_POLYTROPE", "EOS_WHITE_DWARF"]
