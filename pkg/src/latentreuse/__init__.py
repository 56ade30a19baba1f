"""Frozen latent reuse versus mixed-projector training for score-based diffusion models.

Closed-form scores of a noisy low-dimensional data model, the frozen-reuse
lower and upper bounds, the exact structural oracle, optimal shared
projectors, Monte Carlo risk estimators, a small ReLU score trainer and a
reverse-SDE sampler.
"""

from .bounds import (
    BoundReport,
    GMoments,
    MixedProjectorSolution,
    exact_structural_oracle,
    frozen_bound_report,
    frozen_lower_bound,
    frozen_upper_bound,
    g_moments,
    gamma_residual,
    mixed_oracle_upper_bound,
    mixed_penalty_terms,
    mixed_weights,
    solve_mixed_projector,
)
from .datamodel import Gaussian, GaussianMixture, MixtureModel, NoisyLowDimModel, noise_forward, sample_data
from .errors import *  # noqa: F401,F403
from .geometry import Frame, SubspaceReport, make_frame, principal_angles, rotate_frame, subspace_report
from .mc import RiskEstimate
from .risk import estimate_comparator_approx, estimate_risk, frozen_comparator, mixed_comparator
from .sampler import SamplerConfig, reverse_sample
from .schedule import DiffusionSchedule, alpha, h, h_tilde, rho, schedule_eval, time_average
from .score import AnalyticScore, ProjectedScore, ambient_score, latent_maps, log_density, mixture_score
from .trainer import (
    ReluCore,
    TrainConfig,
    TruncationRegion,
    core_forward,
    denoising_loss,
    e2_upper_bound,
    train,
    truncation_radii,
)

__version__ = "0.1.0"
