"""Numerical toolkit for the discrete gradient interface (grad phi) model.

Lattice geometry, convex potentials, Dirichlet and Neumann Gibbs ensembles, a
preconditioned MALA sampler, exact Gaussian free field oracles, the patching
operator, thermodynamic-integration free energies, and executable checks of
the model's structural inequalities.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .ensembles import DirichletEnsemble, NeumannEnsemble
from .free_energy import SurfaceTensionEstimate, defects, nu_estimate, nustar_estimate
from .gff import GaussianExact, LaplacianSpectrum, extrapolate_limit, nu_exact, nustar_exact
from .lattice import EdgeField, Field, Region, TriadicPartition, cube, cube_plus
from .patching import PatchingOperator
from .potentials import LogCosh, Potential, Quadratic, parse_potential
from .sampler import ChainConfig, mala_chain

__all__ = [
    "__version__",
    "ChainConfig",
    "DirichletEnsemble",
    "EdgeField",
    "Field",
    "GaussianExact",
    "LaplacianSpectrum",
    "LogCosh",
    "NeumannEnsemble",
    "PatchingOperator",
    "Potential",
    "Quadratic",
    "Region",
    "SurfaceTensionEstimate",
    "TriadicPartition",
    "cube",
    "cube_plus",
    "defects",
    "extrapolate_limit",
    "mala_chain",
    "nu_estimate",
    "nu_exact",
    "nustar_estimate",
    "nustar_exact",
    "parse_potential",
]
