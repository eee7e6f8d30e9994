"""Simulation and Monte Carlo verification for multitype Markov branching processes."""

from .biased import (BiasedTree, TrunkPath, simulate_biased_tree, simulate_mutation_chain, simulate_trunk,
                     trunk_occupation)
from .estimators import (CheckRow, MCEstimate, estimate_forward_side, estimate_trunk_side, feynman_kac_check,
                         ldp_rate_estimate, limit_checks, verify_size_bias)
from .forward import FamilyTree, population_summary, simulate
from .functionals import PathFunctional, parse_functional
from .model import (REFERENCE_MODELS, BranchingModel, ModelError, OffspringLaw, load_model, mean_data,
                    parse_model, validate_model)
from .spectral import (SpectralData, ancestral_distribution, biased_laws, derived_generators, matrix_exponential,
                       perron, rate_function, retrospective_generator, spectral_data, variational_lambda)

__version__ = "0.1.0"
