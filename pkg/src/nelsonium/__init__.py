"""Numerical toolkit for Nelson stochastic mechanics of weakly interacting bosons.

Spectral Schrödinger solvers, Madelung fields and hierarchies, Nelson
diffusion samplers, entropy/energy diagnostics and a closed-form Gaussian
oracle, wired together by the ``nelsonium`` command line.
"""

from .grid import Grid, GridError, build_grid
from .potentials import PairPotential
from .schrodinger import SchrodingerProblem, evolve

__all__ = ["Grid", "GridError", "build_grid", "PairPotential", "SchrodingerProblem", "evolve"]
__version__ = "0.1.0"
