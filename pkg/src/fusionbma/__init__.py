"""Bayesian variable selection and fusion with a fusion-pMOM non-local slab."""

from .inference import bf_rate_experiment, exact_posterior, metrics, summarize
from .marginal import MCConfig, ModelHyper, log_marginal_likelihood, standardize
from .model_space import enumerate_models, model_structure, uniform_chain_prior
from .sampler import SamplerConfig, run_chain

__version__ = "0.1.0"
