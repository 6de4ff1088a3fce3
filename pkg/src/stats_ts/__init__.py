"""Diffusion forecasting with a learned, spectrally regularized noise schedule."""

__version__ = "0.1.0"

from .autodiff import Tensor, evaluate_with_gradients, value_and_grad
from .denoiser import FrequencyGuidedDenoiser, instance_normalize
from .diffusion import ancestral_sample, drift_bound, forward_sample, kl_isotropic, reverse_mean
from .evaluation import MetricReport, crps_from_samples, evaluate_samples, mae_mse
from .rng import RandomSource, sample_standard_normal
from .scheduler import RealizedSchedule, SpectralTrajectoryScheduler, StsWeights, pgd_step
from .spectral import inverse_real_dft, kl_to_uniform, real_dft, spectral_flatness, spectral_mass
from .training import TrainConfig, Trainer, make_windows, train

__all__ = [
    "Tensor",
    "evaluate_with_gradients",
    "value_and_grad",
    "FrequencyGuidedDenoiser",
    "instance_normalize",
    "ancestral_sample",
    "drift_bound",
    "forward_sample",
    "kl_isotropic",
    "reverse_mean",
    "MetricReport",
    "crps_from_samples",
    "evaluate_samples",
    "mae_mse",
    "RandomSource",
    "sample_standard_normal",
    "RealizedSchedule",
    "SpectralTrajectoryScheduler",
    "StsWeights",
    "pgd_step",
    "inverse_real_dft",
    "kl_to_uniform",
    "real_dft",
    "spectral_flatness",
    "spectral_mass",
    "TrainConfig",
    "Trainer",
    "make_windows",
    "train",
]
