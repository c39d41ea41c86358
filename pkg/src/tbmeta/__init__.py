"""Tuberculosis spread on degree-structured metapopulations.

Modules:

* :mod:`tbmeta.netgen`: degree distributions, mixing kernels, connectivity
* :mod:`tbmeta.linalg`: block inverses, low-rank updates, spectral radii
* :mod:`tbmeta.dynamics`: parameters, states and right-hand sides
* :mod:`tbmeta.ngm`: disease-free equilibrium and R0
* :mod:`tbmeta.endemic`: mass-action endemic equilibria
* :mod:`tbmeta.integrate`, :mod:`tbmeta.sweeps`, :mod:`tbmeta.cli`: simulation and tooling
"""

from .dynamics import IncidenceKind, MetapopState, Params, aggregate, rhs
from .errors import NumericalError, TBMetaError, ValidationError
from .netgen import DegreeDistribution, MixingKernel, build_truncated_power_law
from .ngm import dfe, r0

__all__ = [
    "DegreeDistribution", "IncidenceKind", "MetapopState", "MixingKernel", "NumericalError",
    "Params", "TBMetaError", "ValidationError", "aggregate", "build_truncated_power_law",
    "dfe", "r0", "rhs",
]
__version__ = "0.1.0"
