"""Certified planning policies over motion-primitive libraries.

Train a Gaussian prior over policy weights with evolutionary strategies,
restrict to a finite sampled policy set, optimize the posterior against a
generalization bound, and validate the certificate on held-out simulated
environments.
"""

from .bounds import (
    Certificate,
    DiscretePosterior,
    DiscretePrior,
    c_pac,
    c_qpac,
    empirical_cost,
    kl_divergence,
    regularizer_R,
    select_bound,
)
from .es import EsConfig, EsGradient, GaussianPolicyDistribution, train_prior
from .pipeline import CostMatrix, PipelineConfig, SeedPlan, certify_core, validate
from .policy import PlanningPolicy, PolicyArchitecture
from .repopt import RepInstance, RepParams, RepSolution, i_project, optimize_pac, optimize_qpac
from .sim import Environment, EnvConfig, SimConfig, generate_environment, rollout, sense_depth

__version__ = "0.1.0"
