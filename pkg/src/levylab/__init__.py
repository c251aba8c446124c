"""Simulation and ergodicity diagnostics for jump-driven stochastic differential equations."""
from .binning import Binning, EmpiricalLaw, overlap, tv_distance
from .levy_noise import LevyMeasure, PointMeasureRealization, sample_point_measure, tail_moment, total_rate
from .models import Model, build_model, model_from_config
from .sde_core import SimParams, generator_apply, propagate_exponent, simulate_batch, simulate_path

__version__ = "0.1.0"

__all__ = [
    "Binning", "EmpiricalLaw", "overlap", "tv_distance", "LevyMeasure", "PointMeasureRealization",
    "sample_point_measure", "tail_moment", "total_rate", "Model", "build_model", "model_from_config",
    "SimParams", "generator_apply", "propagate_exponent", "simulate_batch", "simulate_path",
]
