"""Phase-space Langevin diffusion on analytically tractable toy
distributions: forward-process construction, closed-form perturbation
kernels, score training, and reverse-time samplers."""

from .errors import ConfigError, NumericError, PsldError
from .recipe import (BetaSchedule, PsldParams, RecipeSpec, critical_nu,
                     instantiate_cld, instantiate_psld, instantiate_vesde,
                     instantiate_vpsde, recipe_drift, stationarity_residual,
                     validate_recipe)
from .kernel import (CholBlock, KernelMoments, beta_integral, chol_block,
                     kernel_moments_dsm, kernel_moments_hsm,
                     kernel_moments_ode_oracle, mean_transition,
                     perturb_sample)
from .score import (GmmSpec, ScoreModel, eps_backward, eps_forward,
                    gmm_marginal_score, make_gmm_score_fn,
                    make_model_score_fn, score_from_eps)
from .objective import dsm_eps_loss, hsm_eps_loss, weighted_score_loss
from .sampler import (SampleRun, SamplerConfig, em_sample, error_coefficients,
                      ode_sample, reverse_drift, sample,
                      sscs_analytic_halfstep, sscs_sample, timestep_grid)
from .guidance import (gmm_class_grad, guided_score, impute_sample,
                       train_toy_classifier)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
