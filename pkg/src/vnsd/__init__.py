"""Pseudo-spectral solver and partial-regularity diagnostics for damped
viscoelastic Navier-Stokes on a periodic box."""
__version__ = "0.1.0"

from .grid_fields import Grid, make_grid
from .solver import State, Stepper, SolverConfig, InitialSpec, make_initial, run, step, pressure_solve

__all__ = [
    "Grid", "make_grid", "State", "Stepper", "SolverConfig", "InitialSpec",
    "make_initial", "run", "step", "pressure_solve",
]
