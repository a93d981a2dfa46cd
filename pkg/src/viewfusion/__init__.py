"""Interpolated-denoising multi-view generation over an analytic toy world.

The noise predictor is the exact Bayes-optimal one for a Gaussian-mixture
scene family, so every sampler can be checked against closed-form oracles.
"""

from .conditioning import (PoseOffset, Trajectory, WeightParams, compute_weights,
                           plan_single_target, plan_spin, view_delta)
from .config import ConfigError, RunConfig, load_config, parse_config
from .metrics import ConsistencyReport, adjacent_consistency, decode_mode, spacetime_slice, ssim
from .numerics import SeededRng, mse, psnr, read_pnm, write_pnm
from .samplers import (GenerationTrace, SamplerConfig, SamplerError, ddim_guided_step,
                       ddpm_reverse_step, interpolated_denoise_stage, run_autoregressive,
                       run_variant)
from .schedule import NoiseSchedule, forward_diffuse, linear_schedule
from .toyworld import ConditionView, ToyWorld, optimal_eps, oracle_sample_view

__version__ = "0.1.0"

__all__ = [
    "ConditionView", "ConfigError", "ConsistencyReport", "GenerationTrace", "NoiseSchedule",
    "PoseOffset", "RunConfig", "SamplerConfig", "SamplerError", "SeededRng", "ToyWorld",
    "Trajectory", "WeightParams", "adjacent_consistency", "compute_weights", "ddim_guided_step",
    "ddpm_reverse_step", "decode_mode", "forward_diffuse", "interpolated_denoise_stage",
    "linear_schedule", "load_config", "mse", "optimal_eps", "oracle_sample_view",
    "parse_config", "plan_single_target", "plan_spin", "psnr", "read_pnm", "run_autoregressive",
    "run_variant", "spacetime_slice", "ssim", "view_delta", "write_pnm",
]
