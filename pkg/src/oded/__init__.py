"""Robust Bayesian design of sampling times for spline-flexible growth models."""

__version__ = "0.1.0"

from .errors import (ConfigError, DomainError, EstimationError, EvaluationError, InferenceError,
                     OdedError)
from .evaluation import (Efficiency, Realizations, flexibility_dispersion, generate_realizations,
                         relative_efficiency)
from .growth_models import (KINDS, EffectsVector, GrowthModel, GrowthModelSpec, ParamVector,
                            equispaced_knots, mean_response, ode_rhs, spline_B, spline_Bprime)
from .inference import (LaplaceApprox, LaplaceSettings, finite_diff_hessian, joint_posterior,
                        laplace_b_given_theta, laplace_theta, log_likelihood_conditional,
                        log_marginal_likelihood_mc, spd_repair)
from .optimizer import (SearchSettings, SearchTrace, ace_optimize, coordinate_exchange,
                        emulator_argmax, gp_fit_1d, multi_start)
from .priors import (DRY_MATTER_FLEXIBILITY, FRUIT_WEIGHT_FLEXIBILITY, GaussianApprox, PriorEntry,
                     PriorSpec, dry_matter_2021, fruit_weight, log_prior_density, preset_prior,
                     prior_moments, sample_prior)
from .simulate import Dataset, TimeDesign, simulate_dataset
from .utility import UtilityEstimate, expected_utility, kld_mvn

__all__ = [name for name in dir() if not name.startswith("_")]
