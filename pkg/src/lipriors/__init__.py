"""Priors constructed from the functional form of a likelihood.

The pipeline: average log-likelihood over pseudo-observations, coarse-graining
into conservation laws, the Jeffreys measure as base, and the max-ent family
m(theta) exp(-sum lambda_k f_k(theta)) / Z(lambda).
"""
from .catalog import (FAMILIES, KnownFamily, conjugate_update, hyperparameters, identify,
                      known_family, known_pdf, match_family, multipliers_for, verify_closure)
from .conservation import (ConservationLaws, Law, average_log_likelihood, compute_mle,
                           extract_conservation_laws, laws_for_model)
from .dsl import ModelSpec, decompose_log_density, load_model, parse_model
from .errors import *  # noqa: F401,F403
from .fisher import (BaseMeasure, check_properness, fisher_information, jeffreys_measure,
                     score, score_mean)
from .maxent import (InducedFamily, MaxEntSolution, entropy_continuous, entropy_discrete,
                     family_density, gibbs_bound_check, induce_prior_family, log_partition,
                     moments, sample, solve_lagrange)

__version__ = "0.1.0"
