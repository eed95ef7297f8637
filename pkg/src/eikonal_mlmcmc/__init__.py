"""Fast Marching eikonal solves and multilevel MCMC for travel-time inversion."""
from .bayes import Observation, Problem, QoI, forward_map, generate_observations, mismatch
from .field import BinaryField, Disk, SineBasis, SlownessField, cantor_index, cantor_unindex, sample_prior
from .fmm import fmm_solve, local_update, solve_at
from .grid import Domain, Grid, build_grid
from .mcmc import PCN, ChainConfig, Independence, accept, propose, run_chain
from .mlmcmc import MLConfig, a_terms, indicator, level_schedule, mlmcmc_estimate
from .oracle import gauss_hermite, gh_posterior_expectation, hellinger_distance_1d

__version__ = "0.1.0"
