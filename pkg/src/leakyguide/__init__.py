"""Modes, transparent boundary maps and Helmholtz solves for leaky circular waveguides."""

from .core import (ConfigError, GaussLegendre, InletConfig, RefractiveProfile, SolverError, ToleranceSet,
                   TransformedProblem, WaveguideConfig, config_from_dict, config_to_dict, gamma_kappa,
                   load_config, table1_config, transform_radial, weighted_inner)
from .eigensolver import (GalerkinSystem, Spectrum, assemble_galerkin, convergence_study, shooting_refine,
                          solve_modes)

__version__ = "0.1.0"
