"""Equilibria, Lagrangian dynamics and decay diagnostics for viscous gas stars
with a physical vacuum boundary."""

from .eos import EquationOfState, Polytrope, WhiteDwarf, make_eos

__version__ = "0.1.0"

__all__ = ["EquationOfState", "Polytrope", "WhiteDwarf", "make_eos", "__version__"]
