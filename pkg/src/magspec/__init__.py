"""Numerical toolkit for discreteness and positivity of magnetic Schroedinger spectra.

Lattice discretisation of H_{a,V} = (-i grad + a)^2 + V on cubes, Wiener
capacities, the Molchanov functional, tiling scans of the spectral criteria,
an inequality test bench with calibrated constants, and the half-space
construction that shows the exponent of f_n to be sharp.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .capacity import cube_capacity, nodal_capacity, wiener_capacity
from .criteria import AdmissiblePair, scan_discreteness, validate_pair
from .errors import (
    ConfigError,
    ConvergenceError,
    DomainError,
    GridMismatchError,
    InvalidResolutionError,
    SizeError,
    SolverError,
)
from .lattice import (
    CompactSetMask,
    Cube,
    DomainMask,
    Grid,
    GridFunction,
    MagneticPotential,
    ScalarPotential,
)
from .molchanov import MolchanovQuery, molchanov_brute, molchanov_greedy
from .spectral import dirichlet_bottom, local_energy, neumann_bottom

__all__ = [
    "__version__",
    "AdmissiblePair",
    "CompactSetMask",
    "ConfigError",
    "ConvergenceError",
    "Cube",
    "DomainError",
    "DomainMask",
    "Grid",
    "GridFunction",
    "GridMismatchError",
    "InvalidResolutionError",
    "MagneticPotential",
    "MolchanovQuery",
    "ScalarPotential",
    "SizeError",
    "SolverError",
    "cube_capacity",
    "dirichlet_bottom",
    "local_energy",
    "molchanov_brute",
    "molchanov_greedy",
    "neumann_bottom",
    "nodal_capacity",
    "scan_discreteness",
    "validate_pair",
    "wiener_capacity",
]
